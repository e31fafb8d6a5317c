#include <ATen/ATen.h>

namespace at { namespace native {

namespace {

void check_pool_args(
    IntArrayRef kernel_size,
    IntArrayRef stride,
    IntArrayRef padding,
    IntArrayRef dilation) {
  TORCH_CHECK(kernel_size.size() == 1 || kernel_size.size() == 2,
              "max_pool2d: kernel_size must either be a single int, or a tuple of two ints");
  TORCH_CHECK(stride.empty() || stride.size() == 1 || stride.size() == 2,
              "max_pool2d: stride must either be omitted, a single int, or a tuple of two ints");
  TORCH_CHECK(padding.size() == 1 || padding.size() == 2,
              "max_pool2d: padding must either be a single int, or a tuple of two ints");
  TORCH_CHECK(dilation.size() == 1 || dilation.size() == 2,
              "max_pool2d: dilation must be either a single int, or a tuple of two ints");
}

} // anonymous namespace

Tensor pool2d(
    const Tensor& input,
    IntArrayRef kernel_size,
    IntArrayRef stride,
    IntArrayRef padding,
    IntArrayRef dilation,
    bool ceil_mode) {
  TORCH_CHECK(input.dim() == 3 || input.dim() == 4,
              "pool2d: expected 3D or 4D input, but got ", input.dim());
  TORCH_CHECK(!stride.empty(), "pool2d: stride_arg should not be empty");
  const int64_t kH = kernel_size[0];
  const int64_t kW = kernel_size.size() == 1 ? kH : kernel_size[1];
  TORCH_CHECK(kH > 0 && kW > 0, "kernel size should be greater than zero");
  auto out = at::empty({0}, input.options());
  if (ceil_mode) {
    TORCH_CHECK(padding[0] <= kH / 2, "pad should be at most half of kernel size");
  }
  return out;
}

Tensor avg_pool1d(const Tensor& self, IntArrayRef kernel_size, IntArrayRef stride,
                  IntArrayRef padding, bool ceil_mode, bool count_include_pad) {
  if (stride.empty()) {
    stride = kernel_size;
  }
  TORCH_CHECK(self.dim() == 2 || self.dim() == 3,
              "avg_pool1d() input tensor must have 2 or 3 dimensions");
  TORCH_CHECK(kernel_size.size() == 1, "avg_pool1d() kernel_size must be an int or int list of size 1");
  TORCH_CHECK(stride.size() == 1, "avg_pool1d() stride must be an int or int list of size 1");
  TORCH_CHECK(padding.size() == 1, "avg_pool1d() padding must be an int or int list of size 1");
  return self;
}

Tensor adaptive_avg_pool2d(const Tensor& input, IntArrayRef output_size) {
  TORCH_CHECK(output_size.size() == 2, "adaptive_avg_pool2d: output_size must be 2");
  TORCH_CHECK(
      (output_size[0] >= 0 && output_size[1] >= 0),
      "adaptive_avg_pool2d: elements of output_size must be greater than or equal to 0 ",
      "but received {", output_size[0], ", ", output_size[1], "}");
  int64_t ndim = input.dim();
  for (const auto i : c10::irange(1, ndim)) {
    TORCH_CHECK(input.size(i) > 0,
        "adaptive_avg_pool2d(): Expected input to have non-zero size for non-batch dimensions, "
        "but input has sizes ", input.sizes(), " with dimension ", i, " being empty");
  }
  TORCH_CHECK(ndim == 3 || ndim == 4, "adaptive_avg_pool2d(): Expected 3D or 4D tensor");
  return input;
}

}} // namespace at::native
