# demo_script.py
"""
End-to-end toy run: synthetic corpus, 4-zone population, a small DeepCAM,
locations on a 4-node network and a validation report against the corpus.
"""

import asyncio
import json
import os
import sys

from agents.master_agent import get_master_agent
from utils.config import load_config
from utils.io_store import read_json
from utils.logging_setup import setup_logging

DEMO_OUT = "artifacts/demo"


async def run_demo(out_dir: str = DEMO_OUT) -> dict:
    config = load_config("config/pipeline_config.yaml", {"paths.output_dir": out_dir})
    setup_logging(config.logging)

    print("=" * 60)
    print("🚦 TRAVEL DEMAND PIPELINE DEMO")
    print("=" * 60)

    master = get_master_agent(config, out_dir)
    summary = await master.run_pipeline()

    print("\n📊 STAGES")
    for stage in summary["stages"]:
        print(f"  • {stage['stage']:<11} {stage['status']:<10} {', '.join(stage['outputs'])}")

    report = read_json(os.path.join(out_dir, "validate", "report.json"))
    print("\n📏 VALIDATION")
    for entry in report["entries"]:
        value = "-" if entry["value"] is None else f"{entry['value']:.4f}"
        print(f"  • {entry['slice']:<28} {entry['metric']:<8} {value:>8}  {entry['status']}")
    return summary


if __name__ == "__main__":
    try:
        result = asyncio.run(run_demo())
        print(f"\n✅ Demo finished, artifacts in {DEMO_OUT}")
        print(json.dumps(result["agents"], indent=2))
    except KeyboardInterrupt:
        print("\n\nDemo stopped by user.")
    except Exception as e:
        print(f"\nError during demo: {e}")
        sys.exit(1)
