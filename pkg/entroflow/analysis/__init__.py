from .tables import *
from .tiny import *
