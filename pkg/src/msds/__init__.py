"""Multi-source spatial dataset search."""
from .errors import MSDSError
from .geometry import (
    GridConfig,
    SpatialSet,
    coverage_increment,
    intersection_count,
    is_connected,
    is_connected_graph,
    rasterize,
    set_distance,
    zorder_decode,
    zorder_encode,
)
from .graph import DatasetGraph, build_graph, load_graph, node_distance_lb, save_graph, update_graph
from .ibtree import IBtree
from .mcqc import McqcResult, gadg, gasm
from .miq import TopKResults, search
from .config import RunConfig
from .coordinator import Center, GlobalMcqc, GlobalTopK, Query
from .dynamic import LiveQuery, UpdateEvent, apply_update, comm_meter_report, register_live_query
from .protocol import CommMeter, MsgType, SourceDescriptor
from .source import DataSource
from .transport import InProcessLink, SourceServer, TCPLink

__version__ = "0.1.0"
