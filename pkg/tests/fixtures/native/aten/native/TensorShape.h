#pragma once
#include <ATen/ATen.h>

#define CHECK_DIM_HELPER(x) \
  TORCH_CHECK(x.dim() > 0, "macro body is a directive and must be skipped")

namespace at {
namespace native {

struct ReshapeHelper {
 public:
  explicit ReshapeHelper(int64_t numel) : numel_(numel) {
    TORCH_CHECK(numel >= 0, "ReshapeHelper: numel must be non-negative");
  }

  std::vector<int64_t> infer_size(IntArrayRef shape) const {
    int64_t newsize = 1;
    c10::optional<int64_t> infer_dim;
    for (int64_t dim = 0, ndim = shape.size(); dim != ndim; dim++) {
      if (shape[dim] == -1) {
        TORCH_CHECK(!infer_dim, "only one dimension can be inferred");
        infer_dim = dim;
      } else {
        TORCH_CHECK(shape[dim] >= 0, "invalid shape dimension ", shape[dim]);
        newsize *= shape[dim];
      }
    }
    return shape.vec();
  }

 private:
  int64_t numel_;
};

inline Tensor narrow(const Tensor& self, int64_t dim, int64_t start, int64_t length) {
  TORCH_CHECK(self.dim() > 0, "narrow() cannot be applied to a 0-dim tensor.");
  TORCH_CHECK(length >= 0, "narrow(): length must be non-negative.");
  auto cur_size = self.size(dim);
  TORCH_CHECK(start <= cur_size - length,
              "start (", start, ") + length (", length, ") exceeds dimension size (", cur_size, ").");
  return self;
}

inline Tensor repeat(const Tensor& self, IntArrayRef repeats) {
  TORCH_CHECK(repeats.size() >= (size_t)self.dim(),
              "Number of dimensions of repeat dims can not be smaller than number of dimensions of tensor");
  return self;
}

inline Tensor select(const Tensor& self, int64_t dim, int64_t index) {
  const auto ndim = self.dim();
  TORCH_CHECK_INDEX(ndim != 0, "select() cannot be applied to a 0-dim tensor.");
  TORCH_CHECK(index >= -self.size(dim) && index < self.size(dim),
              "select(): index ", index, " out of range for tensor of size ",
              self.sizes(), " at dimension ", dim);
  return self;
}

} // namespace native
} // namespace at
