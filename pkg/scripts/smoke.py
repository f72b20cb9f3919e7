import sys
import tempfile
from pathlib import Path

# Ensure the package is importable when running the script directly
ROOT = Path(__file__).resolve().parents[1]
sys.path.insert(0, str(ROOT))

from app.models.schemas import PresetScenario, RunConfig
from app.main import main

PRESETS = ["S-ONE", "S-SUB", "S-SUP", "S-MIX", "GAUSS"]

# flow_consistency and bound_dominance are exact; the sampled checks stay small here
CHECKS = {
    "S-ONE": "flow_consistency,bound_dominance,longtime",
    "S-SUB": "flow_consistency,bound_dominance,longtime",
    "S-SUP": "flow_consistency,longtime,sim_consistency",
    "S-MIX": "flow_consistency,unbiasedness,sim_consistency",
    "GAUSS": "unbiasedness,sim_consistency",
}

failures = []

print("Running every command on every named scenario:\n")

with tempfile.TemporaryDirectory() as tmp:
    for name in PRESETS:
        config = RunConfig(
            scenario=PresetScenario(name=name),
            engine={"seed": 2024, "horizon": 4, "N_grid": [50, 200], "runs": 20, "replicates": 500},
            output={"dump_trajectories": 2},
            verify={"horizon": 4, "mean_runs": 400, "sim_replicates": 4000, "bound_steps": 10},
        )
        path = Path(tmp) / f"{name}.json"
        path.write_text(config.model_dump_json(), encoding="utf-8")
        commands = ["simulate", "particles", "verify"] if name == "GAUSS" else ["exact", "simulate", "particles", "verify"]
        for command in commands:
            argv = [command, "--config", str(path), "--out", str(Path(tmp) / name)]
            if command == "verify":
                argv += ["--checks", CHECKS[name]]
            code = main(argv)
            status = "ok" if code == 0 else f"exit {code}"
            print(f"{name:6} {command:10} {status}")
            if code != 0:
                failures.append((name, command, code))

if failures:
    print(f"\n{len(failures)} failing command(s)")
    sys.exit(1)
print("\nAll commands succeeded")
