"""Label-free 3D object discovery from multi-traversal LiDAR with reward-ranked box refinement."""

__version__ = "0.1.0"
