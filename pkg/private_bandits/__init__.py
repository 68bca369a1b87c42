"""差分隐私停止规则与私有多臂老虎机"""

__version__ = "0.1.0"
