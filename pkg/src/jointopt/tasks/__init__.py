from .base import Task
from .bitstring import BitstringTask, make_instance
from .dtree import DecisionTreeTask

__all__ = ["Task", "BitstringTask", "make_instance", "DecisionTreeTask"]
