"""Spawns a review service seeded with exactly three mock-generated items;
used by the frontend integration test. Usage: python3 serve_fixture.py PORT DIR"""

import sys
from pathlib import Path

from ctreason.curation.generate import MockGenerationClient
from ctreason.curation.pipeline import run_generate
from ctreason.review.service import create_app
from ctreason.review.store import ReviewStore
from ctreason.synth import SynthConfig, generate_dataset

import uvicorn


def main():
    port, workdir = int(sys.argv[1]), Path(sys.argv[2])
    dataset = workdir / "ds"
    generate_dataset(dataset, SynthConfig(
        n_subjects=3, slices_per_subject=1, profile="small", resolution=32,
        seed=9, organs_per_slice=1))
    store_path = workdir / "review.db"
    store = ReviewStore(store_path)
    run_generate(dataset, workdir / "curation", MockGenerationClient(), store=store)
    app = create_app(store_path, dataset_root=dataset, client=MockGenerationClient())
    uvicorn.run(app, host="127.0.0.1", port=port, log_level="error")


if __name__ == "__main__":
    main()
