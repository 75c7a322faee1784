#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstring>
#include <iostream>
#include <optional>
#include <sstream>

#include "ste/cli.hpp"
#include "ste/losses.hpp"
#include "ste/metrics.hpp"
#include "ste/net.hpp"
#include "ste/pipeline.hpp"
#include "ste/vgg.hpp"

namespace py = pybind11;

namespace {

using ste::nn::Shape;
using ste::nn::Tensor;
using ste::nn::Var;
namespace ops = ste::nn::ops;

using F32Array = py::array_t<float, py::array::c_style | py::array::forcecast>;
using F64Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

ste::ImageBuffer to_image(const F32Array& a) {
  if (a.ndim() != 3 || a.shape(2) != 3) throw std::invalid_argument("expected an HxWx3 array");
  const auto h = static_cast<int>(a.shape(0));
  const auto w = static_cast<int>(a.shape(1));
  return ste::ImageBuffer::from_values(h, w, std::vector<float>(a.data(), a.data() + a.size()));
}

F32Array from_image(const ste::ImageBuffer& img) {
  F32Array out({img.height(), img.width(), 3});
  std::memcpy(out.mutable_data(), img.values().data(), img.size() * sizeof(float));
  return out;
}

F32Array from_mask(const ste::StrokeMask& m) {
  F32Array out({m.height(), m.width()});
  std::memcpy(out.mutable_data(), m.values().data(), m.size() * sizeof(float));
  return out;
}

Tensor<double> to_tensor(const F64Array& a) {
  if (a.ndim() != 4) throw std::invalid_argument("expected an NCHW array");
  const Shape s{static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)),
                static_cast<int>(a.shape(2)), static_cast<int>(a.shape(3))};
  return Tensor<double>(s, std::vector<double>(a.data(), a.data() + a.size()));
}

F64Array from_tensor(const Tensor<double>& t) {
  const Shape& s = t.shape();
  F64Array out({s.n, s.c, s.h, s.w});
  std::memcpy(out.mutable_data(), t.data(), t.numel() * sizeof(double));
  return out;
}

Var<double> bias_var(const std::optional<F64Array>& b, bool grad) {
  if (!b) return Var<double>();
  const auto n = static_cast<int>(b->size());
  return Var<double>(Tensor<double>(Shape{1, n, 1, 1}, std::vector<double>(b->data(), b->data() + n)),
                     grad);
}

// Value plus gradients of sum(y * upstream) w.r.t. x, weight and bias.
py::tuple conv2d(const F64Array& x, const F64Array& w, const std::optional<F64Array>& b, int stride,
                 int pad, const std::optional<F64Array>& upstream) {
  Var<double> xv(to_tensor(x), true);
  Var<double> wv(to_tensor(w), true);
  Var<double> bv = bias_var(b, true);
  const ops::ConvGeometry g{static_cast<int>(w.shape(2)), stride, pad};
  const Var<double> y = ops::conv2d(xv, wv, bv, g);
  if (!upstream) return py::make_tuple(from_tensor(y.value()));
  ste::nn::backward(ops::sum(ops::mul(y, Var<double>(to_tensor(*upstream)))));
  py::object gb = bv.defined() ? py::object(from_tensor(bv.grad())) : py::none();
  return py::make_tuple(from_tensor(y.value()), from_tensor(xv.grad()), from_tensor(wv.grad()), gb);
}

py::tuple partial_conv2d(const F64Array& x, const F64Array& mask, const F64Array& w,
                         const std::optional<F64Array>& b, int stride, int pad) {
  ste::nn::PartialConv2d<double> conv;
  conv.weight = Var<double>(to_tensor(w));
  conv.bias = bias_var(b, false);
  conv.geometry = {static_cast<int>(w.shape(2)), stride, pad};
  const auto st = conv.forward({Var<double>(to_tensor(x)), to_tensor(mask)});
  return py::make_tuple(from_tensor(st.feature.value()), from_tensor(st.mask));
}

double scalar(const Var<double>& v) { return v.value().item(); }

ste::NetworkConfig network_config(std::optional<std::array<int, 3>> miniature) {
  return miniature ? ste::NetworkConfig::miniature((*miniature)[0], (*miniature)[1], (*miniature)[2])
                   : ste::NetworkConfig{};
}

py::tuple erase_identity(const F32Array& image, const std::string& regions_json, double expand) {
  ste::EraseOptions opt;
  opt.expand_factor = expand;
  const auto regions = ste::parse_regions(nlohmann::json::parse(regions_json));
  const auto r = ste::erase_regions(to_image(image), regions, ste::identity_eraser(), opt);
  return py::make_tuple(from_image(r.image), from_mask(r.mask), r.warnings);
}

py::tuple run_cli(std::vector<std::string> args) {
  args.insert(args.begin(), "stroke_erase");
  std::vector<char*> argv;
  for (auto& a : args) argv.push_back(a.data());
  // cli::run reports on std::cout / std::cerr.
  std::ostringstream out;
  std::ostringstream err;
  auto* old_out = std::cout.rdbuf(out.rdbuf());
  auto* old_err = std::cerr.rdbuf(err.rdbuf());
  int code = 0;
  try {
    code = ste::cli::run(static_cast<int>(argv.size()), argv.data());
  } catch (...) {
    std::cout.rdbuf(old_out);
    std::cerr.rdbuf(old_err);
    throw;
  }
  std::cout.rdbuf(old_out);
  std::cerr.rdbuf(old_err);
  return py::make_tuple(code, out.str(), err.str());
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Stroke-based scene text erasing.";
  py::register_exception<ste::Error>(m, "Error", PyExc_RuntimeError);

  m.def("mse", [](const F32Array& a, const F32Array& b) { return ste::mse(to_image(a), to_image(b)); });
  m.def(
      "psnr", [](const F32Array& a, const F32Array& b, double peak) {
        return ste::psnr(to_image(a), to_image(b), peak);
      },
      py::arg("a"), py::arg("b"), py::arg("peak") = 1.0);
  m.def(
      "ssim",
      [](const F32Array& a, const F32Array& b, int window, double sigma) {
        ste::SsimParams p;
        p.window = window;
        p.sigma = sigma;
        return ste::ssim(to_image(a), to_image(b), p);
      },
      py::arg("a"), py::arg("b"), py::arg("window") = 11, py::arg("sigma") = 1.5);
  m.attr("PSNR_CAP") = ste::kPsnrCap;

  m.def("conv2d", &conv2d, py::arg("x"), py::arg("weight"), py::arg("bias") = py::none(),
        py::arg("stride") = 1, py::arg("pad") = 0, py::arg("upstream") = py::none(),
        "Returns (y,) or, with `upstream`, (y, dx, dweight, dbias) of sum(y * upstream).");
  m.def("partial_conv2d", &partial_conv2d, py::arg("x"), py::arg("mask"), py::arg("weight"),
        py::arg("bias") = py::none(), py::arg("stride") = 1, py::arg("pad") = 0);

  m.def("dice_loss", [](const F64Array& p, const F64Array& g) {
    return scalar(ste::dice_loss(Var<double>(to_tensor(p)), Var<double>(to_tensor(g))));
  });
  m.def("pixel_loss", [](const F64Array& out, const F64Array& gt, const F64Array& valid, double hw) {
    return scalar(ste::pixel_loss(Var<double>(to_tensor(out)), Var<double>(to_tensor(gt)),
                                  Var<double>(to_tensor(valid)), hw));
  });
  m.def("gram", [](const F64Array& x) { return from_tensor(ops::gram(Var<double>(to_tensor(x))).value()); });
  m.def("tv_loss", [](const F64Array& comp, const F64Array& hole) {
    return scalar(ste::tv_loss(Var<double>(to_tensor(comp)), to_tensor(hole)));
  });

  m.def(
      "vgg_features",
      [](const std::string& path, const F64Array& rgb) {
        std::vector<F64Array> out;
        for (const auto& f : ste::Vgg19<double>::load(path).features(Var<double>(to_tensor(rgb)))) {
          out.push_back(from_tensor(f.value()));
        }
        return out;
      },
      py::arg("weights"), py::arg("rgb"), "relu1_1 .. relu5_1 for an NCHW RGB batch in [0, 1].");

  m.def(
      "parameter_count",
      [](std::optional<std::array<int, 3>> miniature) {
        return ste::EraseNet<float>(network_config(miniature)).count_parameters();
      },
      py::arg("miniature") = py::none(), "Trainable parameters; `miniature` is (height, width, divisor).");
  m.def(
      "layer_shapes",
      [](std::optional<std::array<int, 3>> miniature) {
        std::vector<std::pair<std::string, std::array<int, 3>>> out;
        for (const auto& l : ste::EraseNet<float>(network_config(miniature)).trace_shapes()) {
          out.push_back({l.name, {l.shape.c, l.shape.h, l.shape.w}});
        }
        return out;
      },
      py::arg("miniature") = py::none());

  m.def("erase_identity", &erase_identity, py::arg("image"), py::arg("regions_json"),
        py::arg("expand") = 0.15,
        "Round-trips every region through the geometry with a pass-through eraser.");
  m.def("run_cli", &run_cli, py::arg("args"), "Returns (exit code, stdout, stderr).");
}
