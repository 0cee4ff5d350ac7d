"""Allow `python -m safedagger`."""
from safedagger.cli import main

main()
