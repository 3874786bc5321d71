"""The whole pipeline from the command line, driven from Python.

Equivalent shell session:

    sparse-bitserial gen-weights smoke --seed 42 --out out
    sparse-bitserial quantize smoke --weights out/weights.sbw --out out
    sparse-bitserial encode smoke --weights out/quantized_weights.sbw --out out
    sparse-bitserial run smoke --seed 42 --out out/run
    sparse-bitserial check

Run: python notebooks/07_command_line_pipeline.py
"""
# %%
import json
import tempfile
from pathlib import Path

from sparse_bitserial.cli import main

out = Path(tempfile.mkdtemp())
main(["gen-weights", "smoke", "--seed", "42", "--out", str(out)])
main(["quantize", "smoke", "--weights", str(out / "weights.sbw"), "--out", str(out)])
main(["encode", "smoke", "--weights", str(out / "quantized_weights.sbw"), "--out", str(out)])

# %%
main(["run", "smoke", "--seed", "42", "--out", str(out / "run")])
print(json.dumps(json.loads((out / "run" / "report.json").read_text()), indent=2))

# %% [markdown]
# Bad input fails in the ingest stage with exit status 2 and leaves nothing behind.

# %%
status = main(["run", "smoke", "--weights", str(out / "missing.sbw"), "--out", str(out / "bad")])
print("exit status", status, "output created:", (out / "bad").exists())
