# flatscan source tree
from . import flatscan
