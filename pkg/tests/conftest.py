import os
import tempfile

# the catalog engine is bound at import time
_scratch = tempfile.mkdtemp(prefix="nikodym-tests-")
os.environ.setdefault("DATABASE_URL", f"sqlite:///{os.path.join(_scratch, 'runs.db')}")
os.environ.setdefault("RESULTS_DIR", os.path.join(_scratch, "results"))
