import sys

from AnchorSplat.cli import main


# python anchor_splat.py {synth,fit,bake,render,check-gradients} [--key value ...]

sys.exit(main())
