# qnd_readout/__init__.py
