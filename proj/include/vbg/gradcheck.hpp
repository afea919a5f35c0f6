#pragma once

#include <string>
#include <vector>

namespace vbg {

struct GradCheckResult {
    std::string name;
    double max_rel_err = 0.0;
    bool pass = false;
};

// Central finite differences (step 1e-5) against the autograd gradients, over
// a deterministic sample of coordinates per tensor. Passing threshold 1e-4
// relative error. Covers: CRF NLL w.r.t. E and T, CRF NLL through the BiLSTM,
// the linear word head, the segmentation loss, and a full end-to-end probe
// that reaches the encoder embedding table through both the grid and the skip
// connection.
std::vector<GradCheckResult> run_gradient_suite(unsigned long long seed);

}  // namespace vbg
