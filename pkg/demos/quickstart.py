"""Small end-to-end run: pincer on the sphere, then an OBJ scene of the first success.

    python3 demos/quickstart.py [OUT_DIR]
"""
import json
import sys
from pathlib import Path

import graspsynth
from graspsynth import batch

ASSETS = Path(graspsynth.__file__).parent / "assets"


def main(out="runs/quickstart"):
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    cfg_path = out / "run.toml"
    cfg_path.write_text(
        "seed = 0\nattempts = 20\n"
        f'objects = ["{(ASSETS / "objects" / "sphere.obj").as_posix()}"]\n'
        f'templates = ["{(ASSETS / "templates" / "pincer_pinch.toml").as_posix()}"]\n'
        "[quality]\nmu = 0.05\n"
    )
    cfg = batch.load_run_config(cfg_path, out=out / "batch")
    res = batch.run_synthesis(cfg)
    st = res.summary["stats"]
    print(f"{st['successes']}/{st['attempts']} successes, {res.summary['accepted']} passed the post-filter")
    for path in sorted((res.out / "records").glob("*.json")):
        if json.loads(path.read_text()).get("success"):
            scene = batch.export_scene(path, out / "scene.obj")
            print(f"scene for {path.name} written to {scene}")
            break


if __name__ == "__main__":
    main(*sys.argv[1:])
