#include "pdd/svm.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>

#include "pdd/eval.hpp"

namespace pdd {

namespace {

Eigen::MatrixXd to_matrix(const Tensor& points) {
  if (points.rank() != 2) throw ShapeError("expected [n, d] points, got " + shape_string(points.shape()));
  Eigen::MatrixXd m(points.dim(0), points.dim(1));
  for (std::size_t i = 0; i < points.dim(0); ++i) {
    for (std::size_t j = 0; j < points.dim(1); ++j) m(i, j) = points[i * points.dim(1) + j];
  }
  return m;
}

Eigen::VectorXd to_labels(std::span<const int> labels, std::size_t n) {
  if (labels.size() != n) throw ShapeError("solve_svm: label count differs from point count");
  Eigen::VectorXd y(n);
  bool pos = false, neg = false;
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] != 1 && labels[i] != -1) throw Error("solve_svm: labels must be -1 or +1");
    y(i) = labels[i];
    (labels[i] > 0 ? pos : neg) = true;
  }
  if (!pos || !neg) throw Error("solve_svm: both labels must be present");
  return y;
}

struct Fit {
  Eigen::VectorXd alpha;
  Eigen::VectorXd w;
  double b = 0.0;
};

Fit assemble(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, Eigen::VectorXd alpha, double b) {
  Fit f;
  f.w = x.transpose() * alpha.cwiseProduct(y);
  f.alpha = std::move(alpha);
  f.b = b;
  return f;
}

double worst_residual(const Fit& f, const Eigen::MatrixXd& x, const Eigen::VectorXd& y) {
  const Eigen::VectorXd fm = y.cwiseProduct((x * f.w).array().matrix() + Eigen::VectorXd::Constant(y.size(), f.b));
  double worst = 0.0;
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    worst = std::max({worst, 1.0 - fm(i), -f.alpha(i), std::abs(f.alpha(i) * (fm(i) - 1.0))});
  }
  return worst;
}

// Re-solves the active constraints exactly: y_i (w.x_i + b) = 1 on the
// support set plus sum alpha y = 0. The minimum-norm alpha keeps duplicated
// points balanced.
bool polish(Fit& fit, const Eigen::MatrixXd& x, const Eigen::VectorXd& y) {
  const double scale = fit.alpha.maxCoeff();
  std::vector<Eigen::Index> active;
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    if (fit.alpha(i) > 1e-8 * scale) active.push_back(i);
  }
  const auto m = static_cast<Eigen::Index>(active.size());
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(m + 1, m + 1);
  Eigen::VectorXd rhs = Eigen::VectorXd::Ones(m + 1);
  rhs(m) = 0.0;
  for (Eigen::Index r = 0; r < m; ++r) {
    for (Eigen::Index c = 0; c < m; ++c) {
      a(r, c) = y(active[r]) * y(active[c]) * x.row(active[r]).dot(x.row(active[c]));
    }
    a(r, m) = y(active[r]);
    a(m, r) = y(active[r]);
  }
  const Eigen::VectorXd sol = a.completeOrthogonalDecomposition().solve(rhs);
  if (!sol.allFinite()) return false;
  Eigen::VectorXd alpha = Eigen::VectorXd::Zero(y.size());
  for (Eigen::Index r = 0; r < m; ++r) {
    if (sol(r) < 0.0) return false;
    alpha(active[r]) = sol(r);
  }
  Fit candidate = assemble(x, y, std::move(alpha), sol(m));
  if (worst_residual(candidate, x, y) > worst_residual(fit, x, y)) return false;
  fit = std::move(candidate);
  return true;
}

}  // namespace

std::vector<std::size_t> SvmSolution::support_indices(double tol) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < alpha.size(); ++i) {
    if (alpha[i] > tol) out.push_back(i);
  }
  return out;
}

double SvmSolution::objective() const {
  double s = 0.0;
  for (double v : w) s += v * v;
  return 0.5 * s;
}

SvmSolution solve_svm(const Tensor& points, std::span<const int> labels, const SvmOptions& options) {
  const Eigen::MatrixXd x = to_matrix(points);
  const auto n = x.rows();
  const Eigen::VectorXd y = to_labels(labels, static_cast<std::size_t>(n));
  const Eigen::MatrixXd k = x * x.transpose();

  // Dual: min 1/2 a'Qa - sum a, y'a = 0, a >= 0, Q = (y y') .* K.
  // Maximal-violating pair with second-order selection; the box has no
  // upper side, so only the zero bound can clip a step.
  Eigen::VectorXd alpha = Eigen::VectorXd::Zero(n);
  Eigen::VectorXd grad = Eigen::VectorXd::Constant(n, -1.0);
  constexpr double kTau = 1e-12;
  std::size_t iter = 0;
  for (; iter < options.max_iterations; ++iter) {
    double m_up = -std::numeric_limits<double>::infinity();
    Eigen::Index i = -1;
    for (Eigen::Index t = 0; t < n; ++t) {
      const bool up = y(t) > 0 || alpha(t) > 0.0;
      if (up && -y(t) * grad(t) > m_up) {
        m_up = -y(t) * grad(t);
        i = t;
      }
    }
    double m_low = std::numeric_limits<double>::infinity();
    double best = std::numeric_limits<double>::infinity();
    Eigen::Index j = -1;
    for (Eigen::Index t = 0; t < n; ++t) {
      const bool low = y(t) < 0 || alpha(t) > 0.0;
      if (!low) continue;
      const double v = -y(t) * grad(t);
      m_low = std::min(m_low, v);
      const double gap = m_up - v;
      if (gap > 0.0) {
        const double curvature = std::max(k(i, i) + k(t, t) - 2.0 * k(i, t), kTau);
        const double score = -gap * gap / curvature;
        if (score < best) {
          best = score;
          j = t;
        }
      }
    }
    if (j < 0 || m_up - m_low < options.tolerance) break;

    const double curvature = std::max(k(i, i) + k(j, j) - 2.0 * k(i, j), kTau);
    double d = (m_up + y(j) * grad(j)) / curvature;
    if (y(i) < 0) d = std::min(d, alpha(i));
    if (y(j) > 0) d = std::min(d, alpha(j));
    alpha(i) += y(i) * d;
    alpha(j) -= y(j) * d;
    if (y(i) < 0 && alpha(i) < 0.0) alpha(i) = 0.0;
    if (y(j) > 0 && alpha(j) < 0.0) alpha(j) = 0.0;
    for (Eigen::Index t = 0; t < n; ++t) grad(t) += y(t) * d * (k(t, i) - k(t, j));

    if (alpha.sum() > options.divergence_bound || !alpha.allFinite()) {
      throw Error("solve_svm: data is not linearly separable (dual mass diverged)");
    }
  }

  double b_sum = 0.0;
  std::size_t b_count = 0;
  for (Eigen::Index t = 0; t < n; ++t) {
    if (alpha(t) > 0.0) {
      b_sum += -y(t) * grad(t);
      ++b_count;
    }
  }
  Fit fit = assemble(x, y, alpha, b_count ? b_sum / static_cast<double>(b_count) : 0.0);
  polish(fit, x, y);
  if (worst_residual(fit, x, y) > 1e-6) {
    throw Error("solve_svm: no separating solution found after " + std::to_string(iter) +
                " iterations (data may not be linearly separable)");
  }

  SvmSolution out;
  out.w.assign(fit.w.data(), fit.w.data() + fit.w.size());
  out.alpha.assign(fit.alpha.data(), fit.alpha.data() + fit.alpha.size());
  out.b = fit.b;
  out.iterations = iter;
  return out;
}

double KktResiduals::max() const { return std::max({primal, dual, complementarity, stationarity}); }

KktResiduals kkt_residuals(const SvmSolution& sol, const Tensor& points, std::span<const int> labels) {
  const Eigen::MatrixXd x = to_matrix(points);
  const auto n = x.rows(), d = x.cols();
  if (labels.size() != static_cast<std::size_t>(n) || sol.alpha.size() != static_cast<std::size_t>(n) ||
      sol.w.size() != static_cast<std::size_t>(d)) {
    throw ShapeError("kkt_residuals: solution does not match the data");
  }
  const Eigen::Map<const Eigen::VectorXd> w(sol.w.data(), d);
  Eigen::VectorXd reconstructed = Eigen::VectorXd::Zero(d);
  KktResiduals r;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double y = labels[i];
    const double fm = y * (x.row(i).dot(w) + sol.b);
    r.primal = std::max(r.primal, 1.0 - fm);
    r.dual = std::max(r.dual, -sol.alpha[i]);
    r.complementarity = std::max(r.complementarity, std::abs(sol.alpha[i] * (fm - 1.0)));
    reconstructed += sol.alpha[i] * y * x.row(i).transpose();
  }
  r.stationarity = (w - reconstructed).norm();
  return r;
}

Tensor svm_points(const Tensor& images) {
  if (images.rank() < 2) throw ShapeError("svm_points: expected a batch, got " + shape_string(images.shape()));
  return images.reshape({images.dim(0), images.size() / images.dim(0)});
}

std::vector<int> svm_labels(std::span<const std::size_t> classes) {
  std::vector<int> out;
  out.reserve(classes.size());
  for (std::size_t c : classes) {
    if (c > 1) throw Error("svm_labels: only two classes are supported");
    out.push_back(c == 1 ? 1 : -1);
  }
  return out;
}

double LinearDecision::operator()(std::span<const double> x) const {
  if (x.size() != w.size()) throw ShapeError("linear decision: input has the wrong dimension");
  double s = b;
  for (std::size_t i = 0; i < w.size(); ++i) s += w[i] * x[i];
  return s;
}

LinearDecision linear_decision(const ModelSpec& spec, const Parameters& params) {
  if (spec.architecture != Architecture::Linear || spec.classes != 2) {
    throw Error("linear_decision: needs a two-class linear model");
  }
  check_structure(spec, params);
  const Tensor& weight = params.at("head.weight");
  const Tensor& bias = params.at("head.bias");
  const std::size_t d = weight.dim(1);
  LinearDecision out;
  out.w.resize(d);
  for (std::size_t j = 0; j < d; ++j) out.w[j] = weight[d + j] - weight[j];
  out.b = bias[1] - bias[0];
  return out;
}

DsvProximity dsv_vs_sv_distance(const SyntheticSet& dsv, const SvmSolution& sol, const LabeledSet& data,
                                const LinearDecision& model) {
  const Tensor x = svm_points(data.images);
  const Tensor z = svm_points(dsv.images);
  const std::size_t d = x.dim(1);
  if (z.dim(1) != d) throw ShapeError("dsv_vs_sv_distance: DSVs and data differ in dimension");
  DsvProximity out;
  out.support = sol.support_indices();
  if (out.support.empty()) throw Error("dsv_vs_sv_distance: solution has no support vectors");

  const auto labels = svm_labels(data.labels);
  out.min_training_margin = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < data.size(); ++i) {
    out.min_training_margin =
        std::min(out.min_training_margin, labels[i] * model(x.values().subspan(i * d, d)));
  }
  for (std::size_t r = 0; r < dsv.size(); ++r) {
    const auto point = z.values().subspan(r * d, d);
    DsvProximityRow row;
    row.index = r;
    row.label = dsv.labels[r];
    row.distance = std::numeric_limits<double>::infinity();
    for (std::size_t s : out.support) {
      double dist = 0.0;
      for (std::size_t j = 0; j < d; ++j) dist += (point[j] - x[s * d + j]) * (point[j] - x[s * d + j]);
      dist = std::sqrt(dist);
      if (dist < row.distance) {
        row.distance = dist;
        row.nearest_sv = s;
      }
    }
    row.margin = std::abs(model(point));
    out.max_margin_gap = std::max(out.max_margin_gap, std::abs(row.margin - out.min_training_margin));
    out.rows.push_back(row);
  }
  return out;
}

DsvOracleResult run_dsv_oracle(const LabeledSet& data, const DsvOracleConfig& cfg) {
  data.validate();
  if (data.classes != 2 || data.image_shape() != Shape{1, 1, 2}) throw Error("dsv oracle: needs two-class 2-D points");
  const ModelSpec spec{.architecture = Architecture::Linear, .channels = 1, .height = 1, .width = 2, .classes = 2};
  // Zero start keeps the two class rows antisymmetric on symmetric data.
  const SamConfig train{.lr = cfg.train_lr, .rho = 0.0, .epochs = cfg.train_epochs, .weight_decay = cfg.weight_decay,
                        .seed = cfg.seed};
  const Checkpoint model{spec, train_classifier(spec, zero_params(spec), data.images, data.labels, train), {}};

  DistillConfig dc;
  dc.method = Method::Dsv;
  dc.ipc = cfg.ipc;
  dc.steps = cfg.steps;
  dc.pixel_lr = cfg.pixel_lr;
  dc.weights = {cfg.alpha, 0.0, 0.0};
  dc.gated = cfg.gated;
  dc.init = cfg.init;
  dc.seed = cfg.seed;
  DistillResult extracted = extract_dsv(model, dc, &data);

  DsvOracleResult out;
  out.svm = solve_svm(svm_points(data.images), svm_labels(data.labels));
  out.model = linear_decision(spec, model.params);
  out.final_stat = extracted.manifest.steps.back().stat;
  out.proximity = dsv_vs_sv_distance(extracted.set, out.svm, data, out.model);
  out.dsv = std::move(extracted.set);
  return out;
}

}  // namespace pdd
