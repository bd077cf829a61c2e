import os

os.environ.setdefault("NONSTICKY_WORKERS", "1")
os.environ.setdefault("NONSTICKY_LOG_LEVEL", "INFO")
os.environ.setdefault("NONSTICKY_DENSE_LEVEL_CAP", "20")
