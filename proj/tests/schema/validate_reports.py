"""Runs a tiny end-to-end training and validates every report against docs/report.schema.json."""
import json
import pathlib
import subprocess
import sys
import tempfile

import jsonschema

TINY = [
    "synth.n_images=30", "synth.image_size=32", "synth.template_pool=2", "synth.landmarks=4",
    "keypoints.n_points=6", "keypoints.real_ratio=0.5", "keypoints.jitter_px=1.0",
    "train.hidden=4", "train.descriptor_dim=6", "train.batch_size=2", "train.warmup_iters=4",
    "train.recluster_every=3", "train.rounds=2", "train.stage2_iters=4", "train.K=4", "train.M=8",
    "train.nms_threshold=0.0", "train.max_points_per_image=8", "train.r_min=2.0", "train.outlier_density_k=3",
]


def main(ktl: str, schema_path: str) -> int:
    schema = json.loads(pathlib.Path(schema_path).read_text())
    jsonschema.Draft202012Validator.check_schema(schema)
    with tempfile.TemporaryDirectory() as tmp:
        sets = [arg for s in TINY for arg in ("--set", s)]
        corpus = str(pathlib.Path(tmp, "corpus"))
        run = pathlib.Path(tmp, "run")
        subprocess.run([ktl, "generate", "--corpus", corpus, *sets], check=True, stdout=subprocess.DEVNULL)
        subprocess.run([ktl, "train", "--quiet", "--corpus", corpus, "--run-dir", str(run), *sets], check=True,
                       stdout=subprocess.DEVNULL)
        subprocess.run([ktl, "eval", "--oracle", "--run-dir", str(run)], check=True, stdout=subprocess.DEVNULL)
        reports = sorted(run.glob("**/report.json"))
        if len(reports) != 4:
            print(f"expected 4 reports, found {len(reports)}")
            return 1
        for path in reports:
            jsonschema.validate(json.loads(path.read_text()), schema)
            print(f"valid: {path.relative_to(run)}")
    return 0


if __name__ == "__main__":
    sys.exit(main(sys.argv[1], sys.argv[2]))
