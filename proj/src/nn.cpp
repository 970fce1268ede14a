#include "pedsleep/nn.hpp"

#include <cmath>
#include <numbers>

namespace pedsleep {

BlockParams BlockParams::zeros(int dim, int hidden) {
  BlockParams p;
  p.ln1_g = Matrix::Zero(1, dim);
  p.ln1_b = Matrix::Zero(1, dim);
  p.qkv_w = Matrix::Zero(dim, 3 * dim);
  p.qkv_b = Matrix::Zero(1, 3 * dim);
  p.proj_w = Matrix::Zero(dim, dim);
  p.proj_b = Matrix::Zero(1, dim);
  p.ln2_g = Matrix::Zero(1, dim);
  p.ln2_b = Matrix::Zero(1, dim);
  p.fc1_w = Matrix::Zero(dim, hidden);
  p.fc1_b = Matrix::Zero(1, hidden);
  p.fc2_w = Matrix::Zero(hidden, dim);
  p.fc2_b = Matrix::Zero(1, dim);
  return p;
}

#define PEDSLEEP_BLOCK_FIELDS(X) \
  X(ln1_g) X(ln1_b) X(qkv_w) X(qkv_b) X(proj_w) X(proj_b) X(ln2_g) X(ln2_b) X(fc1_w) X(fc1_b) X(fc2_w) X(fc2_b)

void BlockParams::visit(const std::string& prefix, const ParamVisitor& fn) {
#define X(f) fn(prefix + #f, f);
  PEDSLEEP_BLOCK_FIELDS(X)
#undef X
}

void BlockParams::visit(const std::string& prefix, const ConstParamVisitor& fn) const {
#define X(f) fn(prefix + #f, f);
  PEDSLEEP_BLOCK_FIELDS(X)
#undef X
}

Matrix layer_norm_forward(const Matrix& x, const Matrix& gamma, const Matrix& beta,
                          LayerNormCache* cache) {
  const auto n = x.rows();
  const auto d = static_cast<double>(x.cols());
  Matrix xhat(x.rows(), x.cols());
  Eigen::VectorXd rstd(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double mean = x.row(i).sum() / d;
    const double var = (x.row(i).array() - mean).square().sum() / d;
    rstd(i) = 1.0 / std::sqrt(var + kLayerNormEps);
    xhat.row(i) = (x.row(i).array() - mean) * rstd(i);
  }
  Matrix y = (xhat.array().rowwise() * gamma.row(0).array()).rowwise() + beta.row(0).array();
  if (cache) {
    cache->xhat = std::move(xhat);
    cache->rstd = std::move(rstd);
  }
  return y;
}

Matrix layer_norm_backward(const Matrix& dy, const Matrix& gamma, const LayerNormCache& cache,
                           Matrix& dgamma, Matrix& dbeta) {
  dgamma += (dy.array() * cache.xhat.array()).colwise().sum().matrix();
  dbeta += dy.colwise().sum();
  const Matrix dxhat = dy.array().rowwise() * gamma.row(0).array();
  const double d = static_cast<double>(dy.cols());
  Matrix dx(dy.rows(), dy.cols());
  for (Eigen::Index i = 0; i < dy.rows(); ++i) {
    const double mean_d = dxhat.row(i).sum() / d;
    const double mean_dx = dxhat.row(i).dot(cache.xhat.row(i)) / d;
    dx.row(i) = cache.rstd(i) * (dxhat.row(i).array() - mean_d - cache.xhat.row(i).array() * mean_dx);
  }
  return dx;
}

Matrix linear_forward(const Matrix& x, const Matrix& w, const Matrix& b) {
  Matrix y = x * w;
  y.rowwise() += b.row(0);
  return y;
}

Matrix linear_backward(const Matrix& x, const Matrix& w, const Matrix& dy, Matrix& dw, Matrix& db) {
  dw.noalias() += x.transpose() * dy;
  db += dy.colwise().sum();
  return dy * w.transpose();
}

namespace {
constexpr double kInvSqrt2 = 0.70710678118654752440;
}  // namespace

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2)); }

double gelu_grad(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
  const double pdf = std::exp(-0.5 * x * x) * 0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2;
  return cdf + x * pdf;
}

Matrix block_forward(const BlockParams& p, const Matrix& x, int heads, BlockCache* cache) {
  const auto n = x.rows();
  const auto d = x.cols();
  const auto hd = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));

  LayerNormCache ln1;
  Matrix h1 = layer_norm_forward(x, p.ln1_g, p.ln1_b, cache ? &ln1 : nullptr);
  Matrix qkv = linear_forward(h1, p.qkv_w, p.qkv_b);
  Matrix attn(n, d);
  std::vector<Matrix> probs;
  if (cache) probs.reserve(static_cast<std::size_t>(heads));
  for (int h = 0; h < heads; ++h) {
    const auto q = qkv.middleCols(h * hd, hd);
    const auto k = qkv.middleCols(d + h * hd, hd);
    const auto v = qkv.middleCols(2 * d + h * hd, hd);
    Matrix s = (q * k.transpose()) * scale;
    for (Eigen::Index i = 0; i < n; ++i) {
      const double m = s.row(i).maxCoeff();
      s.row(i) = (s.row(i).array() - m).exp();
      s.row(i) /= s.row(i).sum();
    }
    attn.middleCols(h * hd, hd).noalias() = s * v;
    if (cache) probs.push_back(std::move(s));
  }
  Matrix mid = x + linear_forward(attn, p.proj_w, p.proj_b);

  LayerNormCache ln2;
  Matrix h2 = layer_norm_forward(mid, p.ln2_g, p.ln2_b, cache ? &ln2 : nullptr);
  Matrix pre = linear_forward(h2, p.fc1_w, p.fc1_b);
  Matrix act = pre.unaryExpr([](double v) { return gelu(v); });
  Matrix out = mid + linear_forward(act, p.fc2_w, p.fc2_b);

  if (cache) {
    cache->x = x;
    cache->ln1 = std::move(ln1);
    cache->h1 = std::move(h1);
    cache->qkv = std::move(qkv);
    cache->probs = std::move(probs);
    cache->attn = std::move(attn);
    cache->mid = std::move(mid);
    cache->ln2 = std::move(ln2);
    cache->h2 = std::move(h2);
    cache->pre = std::move(pre);
    cache->act = std::move(act);
  }
  return out;
}

Matrix block_backward(const BlockParams& p, const BlockCache& c, const Matrix& dy, int heads,
                      BlockParams& g) {
  const auto n = c.x.rows();
  const auto d = c.x.cols();
  const auto hd = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));

  // MLP branch.
  Matrix dact = linear_backward(c.act, p.fc2_w, dy, g.fc2_w, g.fc2_b);
  Matrix dpre = dact.array() * c.pre.unaryExpr([](double v) { return gelu_grad(v); }).array();
  Matrix dh2 = linear_backward(c.h2, p.fc1_w, dpre, g.fc1_w, g.fc1_b);
  Matrix dmid = dy + layer_norm_backward(dh2, p.ln2_g, c.ln2, g.ln2_g, g.ln2_b);

  // Attention branch.
  Matrix dattn = linear_backward(c.attn, p.proj_w, dmid, g.proj_w, g.proj_b);
  Matrix dqkv(n, 3 * d);
  for (int h = 0; h < heads; ++h) {
    const auto q = c.qkv.middleCols(h * hd, hd);
    const auto k = c.qkv.middleCols(d + h * hd, hd);
    const auto v = c.qkv.middleCols(2 * d + h * hd, hd);
    const Matrix& pr = c.probs[static_cast<std::size_t>(h)];
    const auto dout = dattn.middleCols(h * hd, hd);
    Matrix dp = dout * v.transpose();
    dqkv.middleCols(2 * d + h * hd, hd).noalias() = pr.transpose() * dout;
    // Softmax Jacobian, row by row.
    Eigen::VectorXd rowdot = (dp.array() * pr.array()).rowwise().sum();
    Matrix ds = pr.array() * (dp.array().colwise() - rowdot.array());
    ds *= scale;
    dqkv.middleCols(h * hd, hd).noalias() = ds * k;
    dqkv.middleCols(d + h * hd, hd).noalias() = ds.transpose() * q;
  }
  Matrix dh1 = linear_backward(c.h1, p.qkv_w, dqkv, g.qkv_w, g.qkv_b);
  return dmid + layer_norm_backward(dh1, p.ln1_g, c.ln1, g.ln1_g, g.ln1_b);
}

}  // namespace pedsleep
