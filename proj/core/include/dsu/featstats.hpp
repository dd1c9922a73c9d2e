#pragma once

#include "dsu/graph.hpp"
#include "dsu/tensor.hpp"

namespace dsu {

/// Per-instance channel statistics of a [B,C,H,W] feature map: mean and
/// standard deviation over the spatial extent, both shaped [B,C].
/// sigma = sqrt(variance + eps), so it stays strictly positive for eps > 0.
struct InstanceStats {
    Tensor mu;
    Tensor sigma;
};

/// Per-channel spread of the batch's instance statistics, shaped [C]:
/// the standard deviation (population divisor) of mu and sigma across the
/// batch. Zero when all instances are identical. Treated as a constant by
/// differentiation.
struct BatchUncertainty {
    Tensor sigma_mu;
    Tensor sigma_sigma;
};

/// Graph handles to differentiable statistics.
struct InstanceStatsNodes {
    Graph::Id mu;
    Graph::Id sigma;
};

/// Records mu/sigma of `x` on the graph (differentiable).
InstanceStatsNodes instance_stats(Graph& g, Graph::Id x, double eps);

/// Value-path computation (no gradients).
InstanceStats instance_stats(const Tensor& x, double eps);

BatchUncertainty batch_uncertainty(const InstanceStats& stats);

struct StatsDistance {
    double mu_dist;
    double sigma_dist;
};

/// Euclidean distance between the batch-averaged mu vectors and between
/// the batch-averaged sigma vectors of two statistic sets. The batches may
/// differ in size; channel counts must match.
StatsDistance stats_distance(const InstanceStats& a, const InstanceStats& b);

} // namespace dsu
