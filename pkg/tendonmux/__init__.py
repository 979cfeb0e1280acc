"""
Simulator of a tendon-driven three-finger hand whose nine cables are driven
by three motors that a spindle switches between output shafts.
"""

__version__ = "0.1.0"
