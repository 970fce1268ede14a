#pragma once

#include <Eigen/Core>
#include <functional>
#include <string>
#include <vector>

namespace pedsleep {

// Token matrices are [tokens x features], row-major.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using ParamVisitor = std::function<void(const std::string& name, Matrix& value)>;
using ConstParamVisitor = std::function<void(const std::string& name, const Matrix& value)>;

// One pre-norm transformer block:
//   x + Attn(LN1(x)), then + MLP(LN2(.)) with a GELU hidden layer.
struct BlockParams {
  Matrix ln1_g, ln1_b;
  Matrix qkv_w, qkv_b;    // [d x 3d], [1 x 3d]
  Matrix proj_w, proj_b;  // [d x d]
  Matrix ln2_g, ln2_b;
  Matrix fc1_w, fc1_b;  // [d x hidden]
  Matrix fc2_w, fc2_b;  // [hidden x d]

  static BlockParams zeros(int dim, int hidden);
  void visit(const std::string& prefix, const ParamVisitor& fn);
  void visit(const std::string& prefix, const ConstParamVisitor& fn) const;
};

struct LayerNormCache {
  Matrix xhat;
  Eigen::VectorXd rstd;
};

inline constexpr double kLayerNormEps = 1e-6;

Matrix layer_norm_forward(const Matrix& x, const Matrix& gamma, const Matrix& beta,
                          LayerNormCache* cache);
Matrix layer_norm_backward(const Matrix& dy, const Matrix& gamma, const LayerNormCache& cache,
                           Matrix& dgamma, Matrix& dbeta);

// y = x W + b
Matrix linear_forward(const Matrix& x, const Matrix& w, const Matrix& b);
// Accumulates dW, db; returns dx.
Matrix linear_backward(const Matrix& x, const Matrix& w, const Matrix& dy, Matrix& dw, Matrix& db);

double gelu(double x);
double gelu_grad(double x);

struct BlockCache {
  Matrix x;
  LayerNormCache ln1;
  Matrix h1;
  Matrix qkv;
  std::vector<Matrix> probs;  // per head [n x n]
  Matrix attn;                // concatenated head outputs, pre-projection
  Matrix mid;                 // residual stream after attention
  LayerNormCache ln2;
  Matrix h2;
  Matrix pre;  // fc1 output before GELU
  Matrix act;  // GELU output
};

Matrix block_forward(const BlockParams& p, const Matrix& x, int heads, BlockCache* cache);
// Accumulates parameter gradients into `grad`; returns dL/dx.
Matrix block_backward(const BlockParams& p, const BlockCache& cache, const Matrix& dy, int heads,
                      BlockParams& grad);

}  // namespace pedsleep
