"""regpinn package."""

from .base import *
from .models import *
from .cli import main
