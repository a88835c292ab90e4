from .metrics import avd, dice, region_metrics, region_volumes, surface
from .stats import (auroc, bonferroni, delong_covariance, delong_test, pearson, placements,
                    ranksum_test, signedrank_test, subset_sum_counts)
from .tables import GroupTable, read_group_csv, stats_report, tiv_normalize, write_group_csv, write_report

__all__ = [
    "GroupTable", "auroc", "avd", "bonferroni", "delong_covariance", "delong_test", "dice",
    "pearson", "placements", "ranksum_test", "read_group_csv", "region_metrics", "region_volumes",
    "signedrank_test", "stats_report", "subset_sum_counts", "surface", "tiv_normalize",
    "write_group_csv", "write_report",
]
