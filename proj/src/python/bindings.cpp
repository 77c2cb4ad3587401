/* Copyright 2026 The trajtta Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

// Python bindings for the numeric core: phantoms, forward operators,
// reconstruction trajectories, ensemble uncertainty and metrics.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "trajtta/errors.hpp"
#include "trajtta/metrics.hpp"
#include "trajtta/operators.hpp"
#include "trajtta/recon.hpp"
#include "trajtta/uncertainty.hpp"
#include "trajtta/volume_io.hpp"

namespace py = pybind11;
using namespace trajtta;

namespace {

using DoubleArray = py::array_t<double, py::array::c_style | py::array::forcecast>;
using LabelArray = py::array_t<std::int32_t, py::array::c_style | py::array::forcecast>;
using BoolArray = py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>;

Image to_image(const DoubleArray& a) {
  if (a.ndim() != 2) throw ShapeError("expected a 2D array");
  const auto h = static_cast<int>(a.shape(0));
  const auto w = static_cast<int>(a.shape(1));
  return Image(h, w, std::vector<double>(a.data(), a.data() + a.size()));
}

py::array_t<double> from_image(const Image& img) {
  py::array_t<double> out({img.height, img.width});
  std::copy(img.data.begin(), img.data.end(), out.mutable_data());
  return out;
}

template <typename T>
py::array_t<T> from_vector(const std::vector<T>& v, std::vector<py::ssize_t> shape) {
  py::array_t<T> out(shape);
  std::copy(v.begin(), v.end(), out.mutable_data());
  return out;
}

// (pixels, C) probabilities from an (H, W, C) or (N, C) array.
std::pair<std::vector<double>, int> to_probs(const DoubleArray& a) {
  if (a.ndim() < 2) throw ShapeError("probabilities need a trailing class axis");
  const auto c = static_cast<int>(a.shape(a.ndim() - 1));
  return {std::vector<double>(a.data(), a.data() + a.size()), c};
}

std::vector<py::ssize_t> leading_shape(const DoubleArray& a) {
  return {a.shape(), a.shape() + a.ndim() - 1};
}

py::dict case_to_dict(const SyntheticCase& c) {
  py::dict d;
  d["case_id"] = c.case_id;
  d["clean"] = from_image(c.clean);
  d["mask"] = from_vector(c.mask.labels, {c.mask.height, c.mask.width});
  d["measurement"] = from_image(c.measurement.data);
  d["operator_id"] = c.measurement.operator_id;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Trajectory-conditioned test-time adaptation core";

  auto base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
  py::register_exception<ShapeError>(m, "ShapeError", base.ptr());
  py::register_exception<IoError>(m, "IoError", base.ptr());
  py::register_exception<DomainError>(m, "DomainError", base.ptr());
  py::register_exception<TrainingError>(m, "TrainingError", base.ptr());
  py::register_exception<ArgumentError>(m, "ArgumentError", base.ptr());

  m.def(
      "generate_case",
      [](std::uint64_t seed, int size, int num_classes, const std::string& operator_id) {
        PhantomConfig cfg;
        cfg.height = size;
        cfg.width = size;
        cfg.num_classes = num_classes;
        cfg.operator_id = operator_id;
        return case_to_dict(generate_synthetic_case(seed, cfg));
      },
      py::arg("seed"), py::arg("size") = 64, py::arg("num_classes") = 4,
      py::arg("operator_id") = "identity");

  m.def("operator_ids", &ForwardOperator::registered_ids);
  m.def("apply_operator", [](const std::string& id, const DoubleArray& x) {
    return from_image(ForwardOperator::from_id(id).apply(to_image(x)));
  });
  m.def("adjoint_operator", [](const std::string& id, const DoubleArray& y) {
    return from_image(ForwardOperator::from_id(id).adjoint(to_image(y)));
  });

  m.def(
      "schedule",
      [](int steps, double horizon, double ratio) {
        return make_schedule(steps, horizon, ratio).times;
      },
      py::arg("steps"), py::arg("horizon") = 1.0, py::arg("ratio") = 1.5);

  m.def(
      "reconstruct",
      [](const DoubleArray& measurement, const std::string& operator_id, int steps,
         double step_size, std::uint64_t seed) {
        ReconConfig cfg;
        cfg.steps = steps;
        cfg.step_size = step_size;
        cfg.noise_seed = seed;
        const Measurement meas{to_image(measurement), operator_id};
        const Trajectory t = reconstruct(meas, cfg);
        py::list images;
        std::vector<double> times;
        for (const auto& s : t.steps) {
          images.append(from_image(s.image));
          times.push_back(s.time);
        }
        return py::make_tuple(images, times);
      },
      py::arg("measurement"), py::arg("operator_id") = "identity", py::arg("steps") = 10,
      py::arg("step_size") = 0.5, py::arg("seed") = 0);

  m.def("entropy", [](const DoubleArray& probs) {
    const auto [p, c] = to_probs(probs);
    return from_vector(entropy_map(p, c), leading_shape(probs));
  });

  m.def("ensemble", [](const std::vector<DoubleArray>& members) {
    if (members.empty()) throw ArgumentError("ensemble needs at least one member");
    std::vector<ProbMap> maps;
    for (const auto& a : members) {
      auto [p, c] = to_probs(a);
      ProbMap pm;
      pm.num_classes = c;
      pm.pixels = static_cast<int>(p.size() / static_cast<std::size_t>(c));
      pm.logits.assign(p.size(), 0.0);
      pm.probs = std::move(p);
      maps.push_back(std::move(pm));
    }
    const EnsembleResult r = finalize(maps);
    auto lead = leading_shape(members.front());
    auto full = lead;
    full.push_back(r.num_classes);
    py::dict d;
    d["mean_probs"] = from_vector(r.mean_probs, full);
    d["label_map"] = from_vector(r.label_map, lead);
    d["entropy"] = from_vector(r.entropy, lead);
    return d;
  });

  m.def(
      "dice",
      [](const LabelArray& pred, const LabelArray& gt, int cls) {
        return dice(std::span<const std::int32_t>(pred.data(), pred.size()),
                    std::span<const std::int32_t>(gt.data(), gt.size()), cls);
      },
      py::arg("pred"), py::arg("gt"), py::arg("cls"));

  m.def(
      "ece",
      [](const DoubleArray& confidence, const BoolArray& correct, int bins) {
        return ece(std::span<const double>(confidence.data(), confidence.size()),
                   std::span<const std::uint8_t>(correct.data(), correct.size()), bins);
      },
      py::arg("confidence"), py::arg("correct"), py::arg("bins") = 15);

  m.def("prauc", [](const DoubleArray& scores, const BoolArray& positive) {
    return prauc(std::span<const double>(scores.data(), scores.size()),
                 std::span<const std::uint8_t>(positive.data(), positive.size()));
  });
}
