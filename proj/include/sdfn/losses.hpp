#pragma once

#include <span>

#include "sdfn/autodiff.hpp"

namespace sdfn {

struct LossBreakdown {
  double l_bbc = 0.0;
  double l_cons = 0.0;
  double l_path = 0.0;
  double l_total = 0.0;
  double lambda = 0.0;
  double tau_path = 0.0;
  std::size_t batch = 0;
};

/// In-batch softmax cross-entropy over s·cos(f_q_i, f_t_j); row i's class is i.
Var bbc_loss(Var f_q, Var f_t, double scale);

/// ||f_q f_qᵀ - f_t f_tᵀ||_F + ||f_in f_inᵀ - f_t f_tᵀ||_F.
Var consistency_loss(Var f_q, Var f_t, Var f_in);

// Self-path distillation. Each query's logits are split into sites of
// `site_width`; per site KL(p_s || p_t) with p = softmax(logits / tau), averaged
// over the sites, summed over queries, divided by the batch size and scaled by
// tau². A null teacher masks that query to zero. Teachers are detached.
Var spd_loss(std::span<const Var> student, std::span<const Var> teacher, std::size_t site_width, double tau);

/// l_total = l_bbc + l_cons + lambda · l_path.
LossBreakdown total_loss(double l_bbc, double l_cons, double l_path, double lambda);

}  // namespace sdfn
