"""Assemble parameter/MAC reports for the three neck graphs.

Each graph is executed once under a counting collection at the configured
input shapes; the trace is the accounting. Shapes matter only through the
MAC columns; parameters are attributed wherever a named tensor is first
consumed.
"""

from __future__ import annotations

from .config import NeckConfig
from .counting import CountReport, collect
from .csn import csn_forward, csn_params
from .fixtures import prepare_inputs
from .fpn import fpn_forward, fpn_params
from .revfp import revfp_forward, revfp_params


def count_all(cfg: NeckConfig) -> CountReport:
    """Run fpn, revfp, and csn forwards under the counting trace."""
    report = CountReport()

    fp = fpn_params(cfg)
    with collect(report, "fpn"):
        fpn_forward(prepare_inputs(cfg, fp), fp, cfg)

    rp = revfp_params(cfg)
    with collect(report, "revfp"):
        P = revfp_forward(prepare_inputs(cfg, rp), rp, cfg)

    cp = csn_params(cfg)
    with collect(report, "csn"):
        csn_forward(P, cfg, cp)

    return report
