import sys
from pathlib import Path

# Make sibling test helpers (oracles.py) importable regardless of invocation dir.
sys.path.insert(0, str(Path(__file__).parent))
