#include "sdfn/losses.hpp"

#include "sdfn/errors.hpp"
#include "sdfn/ops.hpp"

namespace sdfn {

Var bbc_loss(Var f_q, Var f_t, double scale_factor) {
  if (f_q.value().rank() != 2 || f_q.shape() != f_t.shape()) {
    throw ShapeError("bbc_loss: f_q " + shape_str(f_q.shape()) + " and f_t " + shape_str(f_t.shape()) +
                     " must be equal [B x D] matrices");
  }
  const std::size_t batch = f_q.shape()[0];
  Var sims = scale(matmul_nt(l2_normalize_rows(f_q), l2_normalize_rows(f_t)), scale_factor);
  Var log_probs = log_softmax(sims, 1);
  Var diagonal = mul(log_probs, f_q.tape()->constant(Tensor::identity(batch)));
  return scale(sum(diagonal), -1.0 / static_cast<double>(batch));
}

Var consistency_loss(Var f_q, Var f_t, Var f_in) {
  if (f_q.value().rank() != 2 || f_q.shape() != f_t.shape() || f_in.shape() != f_t.shape()) {
    throw ShapeError("consistency_loss: f_q " + shape_str(f_q.shape()) + ", f_t " + shape_str(f_t.shape()) +
                     ", f_in " + shape_str(f_in.shape()) + " must share one [B x D] shape");
  }
  Var gram_t = matmul_nt(f_t, f_t);
  Var gram_q = matmul_nt(f_q, f_q);
  Var gram_in = matmul_nt(f_in, f_in);
  return add(frobenius_norm(sub(gram_q, gram_t)), frobenius_norm(sub(gram_in, gram_t)));
}

Var spd_loss(std::span<const Var> student, std::span<const Var> teacher, std::size_t site_width, double tau) {
  if (student.empty()) throw ShapeError("spd_loss: empty batch");
  if (student.size() != teacher.size()) throw ShapeError("spd_loss: student and teacher batch sizes differ");
  if (!(tau > 0.0)) throw ConfigError("spd_loss: tau_path must be positive");
  if (site_width == 0) throw ShapeError("spd_loss: zero site width");
  Tape& tape = *student[0].tape();
  const double batch = static_cast<double>(student.size());
  Var total;
  for (std::size_t q = 0; q < student.size(); ++q) {
    if (!teacher[q].valid()) continue;
    const Tensor& s = student[q].value();
    if (s.size() % site_width != 0 || teacher[q].value().size() != s.size()) {
      throw ShapeError("spd_loss: logits " + shape_str(s.shape()) + " vs teacher " +
                       shape_str(teacher[q].shape()) + " with site width " + std::to_string(site_width));
    }
    const Shape sites{s.size() / site_width, site_width};
    Var log_ps = log_softmax(scale(reshape(student[q], sites), 1.0 / tau), 1);
    Var detached = tape.constant(teacher[q].value().reshaped(sites));
    Var log_pt = log_softmax(scale(detached, 1.0 / tau), 1);
    Var kl = sum(mul(exp(log_ps), sub(log_ps, log_pt)));
    Var per_query = scale(kl, 1.0 / static_cast<double>(sites[0]));
    total = total.valid() ? add(total, per_query) : per_query;
  }
  if (!total.valid()) return tape.constant(Tensor::scalar(0.0));
  return scale(total, tau * tau / batch);
}

LossBreakdown total_loss(double l_bbc, double l_cons, double l_path, double lambda) {
  if (!(lambda >= 0.0)) throw ConfigError("lambda must be non-negative");
  LossBreakdown b;
  b.l_bbc = l_bbc;
  b.l_cons = l_cons;
  b.l_path = l_path;
  b.lambda = lambda;
  b.l_total = l_bbc + l_cons + lambda * l_path;
  return b;
}

}  // namespace sdfn
