#include <pybind11/complex.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "eyemod/channel.hpp"
#include "eyemod/classifier.hpp"
#include "eyemod/cli.hpp"
#include "eyemod/dataset.hpp"
#include "eyemod/error.hpp"
#include "eyemod/eyepipe.hpp"
#include "eyemod/synth.hpp"

namespace py = pybind11;
using namespace eyemod;

namespace {

Scheme scheme_arg(const std::string& name) {
  const auto s = parse_scheme(name);
  if (!s) throw py::value_error("unknown scheme '" + name + "'; valid names: " + scheme_name_list());
  return *s;
}

ComplexFrame frame_from(const std::string& scheme, py::array_t<std::complex<double>, py::array::c_style> samples) {
  ComplexFrame f;
  f.scheme = scheme_arg(scheme);
  f.samples.assign(samples.data(), samples.data() + samples.size());
  f.spec.frame_len = f.samples.size();
  return f;
}

py::array_t<std::complex<double>> to_numpy(const std::vector<cplx>& v) {
  py::array_t<std::complex<double>> out(static_cast<py::ssize_t>(v.size()));
  std::copy(v.begin(), v.end(), out.mutable_data());
  return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Eye-diagram modulation classification core";

  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      PyErr_SetString(PyExc_RuntimeError, e.what());
    }
  });

  m.def("schemes", [] {
    std::vector<std::string> names;
    for (Scheme s : all_schemes()) names.emplace_back(scheme_name(s));
    return names;
  }, "Scheme names in canonical order.");

  m.def(
      "modulate",
      [](const std::string& scheme, std::uint64_t seed, std::size_t frame_len, std::size_t sps) {
        FrameSpec spec;
        spec.seed = seed;
        spec.frame_len = frame_len;
        spec.sps = sps;
        return to_numpy(modulate(scheme_arg(scheme), spec).samples);
      },
      py::arg("scheme"), py::arg("seed") = 1, py::arg("frame_len") = 1024, py::arg("sps") = 8,
      "Clean unit-power baseband frame.");

  m.def(
      "impair",
      [](const std::string& scheme, py::array_t<std::complex<double>, py::array::c_style> samples, double snr_db,
         std::uint64_t fading_seed, double k_factor) {
        ChannelConfig cfg;
        cfg.snr_db = snr_db;
        cfg.fading_seed = fading_seed;
        cfg.k_factor = k_factor;
        return to_numpy(impair(frame_from(scheme, samples), cfg).samples);
      },
      py::arg("scheme"), py::arg("samples"), py::arg("snr_db"), py::arg("fading_seed") = 1, py::arg("k_factor") = 4.0,
      "Multipath Rician fading followed by AWGN at the requested SNR.");

  m.def(
      "frame_to_tensor",
      [](const std::string& scheme, py::array_t<std::complex<double>, py::array::c_style> samples, std::size_t n_s,
         std::size_t height, std::size_t width) {
        const auto t = frame_to_tensor(frame_from(scheme, samples), {n_s, height, width, height, width});
        py::array_t<float> out(std::vector<py::ssize_t>{static_cast<py::ssize_t>(t.height), static_cast<py::ssize_t>(t.width), 2});
        std::copy(t.data.begin(), t.data.end(), out.mutable_data());
        return out;
      },
      py::arg("scheme"), py::arg("samples"), py::arg("n_s") = 8, py::arg("height") = 299, py::arg("width") = 699,
      "Eye tensor of shape (height, width, 2) with channel 0 = I and channel 1 = Q.");

  m.def(
      "read_dataset",
      [](const std::filesystem::path& path) {
        const auto c = read(path);
        py::array_t<std::uint8_t> pixels(std::vector<py::ssize_t>{static_cast<py::ssize_t>(c.count()), c.height, c.width, c.channels});
        std::copy(c.pixels.begin(), c.pixels.end(), pixels.mutable_data());
        py::dict d;
        d["pixels"] = pixels;
        d["class_ids"] = c.class_ids;
        d["snr_indices"] = c.snr_indices;
        d["class_names"] = c.class_names;
        d["snr_db"] = c.snr_table_db;
        if (c.manifest) {
          d["train"] = c.manifest->train;
          d["val"] = c.manifest->val;
          d["test"] = c.manifest->test;
        }
        return d;
      },
      py::arg("path"), "Dataset container as numpy pixels (N, H, W, 2) plus labels and split indices.");

  m.def(
      "run_cli",
      [](const std::vector<std::string>& args) {
        std::ostringstream out, err;
        int code = 0;
        {
          py::gil_scoped_release release;
          code = cli::run(args, out, err);
        }
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"), "Runs one command-line invocation; returns (exit_code, stdout, stderr).");
}
