"""Collects one verdict line per acceptance criterion for the terminal summary."""

RESULTS = {}


def record(tag, ok, detail):
    line = f"{tag} {'PASS' if ok else 'FAIL'}: {detail}"
    RESULTS[tag] = line
    print(line)
    return ok
