from .checks import *
from .protocols import *
