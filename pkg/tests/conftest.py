import sys
from pathlib import Path

# make gradcheck.py importable from test modules
sys.path.insert(0, str(Path(__file__).parent))
