#pragma once

#include <vector>

#include "adw/features.hpp"
#include "adw/flow.hpp"
#include "adw/image.hpp"
#include "adw/mlp.hpp"
#include "adw/synthdisc.hpp"
#include "adw/tensor.hpp"

// Serial counterparts of the OpenMP kernels. Same arithmetic in the same
// order, no threading: parity tests pin the parallel versions to these and
// the bench tool measures the gap. Not used on any production path.
namespace adw::reference {

FeatureTensor conv_relu_pool(const GrayImage& img, const std::vector<float>& filters,
                             int num_filters, int kernel, int pool);

void mlp_apply_field(const MlpParams& params, const VectorField& in, VectorField& out);

double nll_batch_gradient(const CouplingFlow& flow,
                          const std::vector<std::vector<VectorField>>& batch,
                          FlowGrads& grads);

ScoreMap disc_probability_map(const AdaptorDiscriminator& model,
                              const VectorField& features);

}  // namespace adw::reference
