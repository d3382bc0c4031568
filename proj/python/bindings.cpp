#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <cstring>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "comap/cli.hpp"
#include "comap/covis_map.hpp"
#include "comap/error.hpp"
#include "comap/log.hpp"
#include "comap/proximity.hpp"
#include "comap/scene_io.hpp"

namespace py = pybind11;
using namespace comap;

namespace {

// Owned for the life of the process, like the module itself.
py::handle g_error_type;

using CountArray = py::array_t<std::uint16_t, py::array::c_style | py::array::forcecast>;
using PointArray = py::array_t<double, py::array::c_style | py::array::forcecast>;

CovisMap map_from_array(const CountArray& a, int view_id, int n_views) {
  if (a.ndim() != 2) fail(ErrorKind::kDimensionMismatch, "counts must be a 2-D array");
  CovisMap m = CovisMap::zeros(view_id, static_cast<int>(a.shape(1)),
                               static_cast<int>(a.shape(0)), n_views);
  std::memcpy(m.counts.data(), a.data(), m.counts.size() * sizeof(std::uint16_t));
  return m;
}

CountArray map_to_array(const CovisMap& m) {
  CountArray a({m.height, m.width});
  std::memcpy(a.mutable_data(), m.counts.data(), m.counts.size() * sizeof(std::uint16_t));
  return a;
}

std::vector<Vec3> points_from_array(const PointArray& a) {
  if (a.ndim() != 2 || a.shape(1) != 3) {
    fail(ErrorKind::kDimensionMismatch, "points must have shape (N, 3)");
  }
  std::vector<Vec3> out(a.shape(0));
  const double* d = a.data();
  for (size_t i = 0; i < out.size(); ++i) out[i] = Vec3(d[3 * i], d[3 * i + 1], d[3 * i + 2]);
  return out;
}

PointArray points_to_array(const std::vector<Vec3>& pts) {
  PointArray a({static_cast<py::ssize_t>(pts.size()), py::ssize_t{3}});
  double* d = a.mutable_data();
  for (size_t i = 0; i < pts.size(); ++i) {
    for (int k = 0; k < 3; ++k) d[3 * i + k] = pts[i](k);
  }
  return a;
}

std::string run_command(const std::string& command, const std::string& config_json) {
  const cli::RunConfig c = cli::config_from_json(nlohmann::json::parse(config_json));
  nlohmann::json report;
  if (command == "synth") {
    report = cli::cmd_synth(c);
  } else if (command == "comap") {
    report = cli::cmd_comap(c);
  } else if (command == "enhance") {
    report = cli::cmd_enhance(c);
  } else if (command == "train-proximity") {
    report = cli::cmd_train_proximity(c);
  } else if (command == "eval-loss") {
    report = cli::cmd_eval_loss(c);
  } else if (command == "optimize-demo") {
    report = cli::cmd_optimize_demo(c);
  } else {
    fail(ErrorKind::kInvalidArgument, "unknown command '" + command + "'");
  }
  return report.dump();
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Covisibility maps, point-cloud enhancement and proximity supervision";
  log::set_level(log::Level::kWarning);

  m.def("set_verbose", [](bool verbose) {
        log::set_level(verbose ? log::Level::kInfo : log::Level::kWarning);
      },
      py::arg("verbose") = true, "Log stage progress to stderr.");

  // Instances carry the failure kind name and the CLI exit code.
  g_error_type = py::exception<Error>(m, "ComapError", PyExc_RuntimeError).release();
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      const py::handle type = g_error_type;
      py::object instance = type(py::str(e.what()));
      instance.attr("kind") = std::string(error_kind_name(e.kind()));
      instance.attr("exit_code") = exit_code_for(e.kind());
      PyErr_SetObject(type.ptr(), instance.ptr());
    }
  });

  m.def("_run", [](const std::string& command, const std::string& config_json) {
        py::gil_scoped_release release;
        return run_command(command, config_json);
      },
      py::arg("command"), py::arg("config_json"));

  m.def("covis_maps",
        [](const std::filesystem::path& scene, int kernel_radius, double min_conf) {
          const auto sparse = std::filesystem::is_directory(scene / "sparse") ? scene / "sparse" : scene;
          const SceneBundle b = io::load_scene(sparse, scene / "depth", scene / "corr");
          const int n = static_cast<int>(b.views.size());
          py::dict raw, refined;
          std::vector<CovisMap> refined_maps;
          for (const auto& v : b.views) {
            std::vector<CorrespondenceSet> sets;
            for (const auto& s : b.correspondences) {
              if (s.src_view == v.view_id) sets.push_back(s);
            }
            const CovisMap r = build_covis_map(v, sets, n, min_conf);
            refined_maps.push_back(refine_covis_map(r, kernel_radius));
            raw[py::int_(v.view_id)] = map_to_array(r);
            refined[py::int_(v.view_id)] = map_to_array(refined_maps.back());
          }
          return py::make_tuple(raw, refined, scene_covis_score(refined_maps).score);
        },
        py::arg("scene"), py::arg("kernel_radius") = 1, py::arg("min_conf") = 0.0,
        "Raw and refined count maps keyed by view id, and the scene score S.");

  m.def("refine_covis_map",
        [](const CountArray& counts, int kernel_radius, int n_views) {
          return map_to_array(refine_covis_map(map_from_array(counts, 0, n_views), kernel_radius));
        },
        py::arg("counts"), py::arg("kernel_radius"), py::arg("n_views"));

  m.def("scene_covis_score",
        [](const std::vector<CountArray>& maps, int n_views) {
          std::vector<CovisMap> ms;
          for (size_t i = 0; i < maps.size(); ++i) {
            ms.push_back(map_from_array(maps[i], static_cast<int>(i), n_views));
          }
          const SceneCovisScore s = scene_covis_score(ms);
          return py::make_tuple(s.score, s.per_view_means);
        },
        py::arg("maps"), py::arg("n_views"));

  m.def("weight_out", py::overload_cast<double>(&weight_out), py::arg("scene_score"));

  m.def("read_ply",
        [](const std::filesystem::path& path) {
          const PointCloud c = io::read_ply(path);
          py::array_t<std::uint8_t> colors({static_cast<py::ssize_t>(c.size()), py::ssize_t{3}});
          py::array_t<std::int32_t> sources(static_cast<py::ssize_t>(c.size()));
          auto cv = colors.mutable_unchecked<2>();
          auto sv = sources.mutable_unchecked<1>();
          for (size_t i = 0; i < c.size(); ++i) {
            const Rgb& rgb = c.points[i].color;
            cv(i, 0) = rgb.r;
            cv(i, 1) = rgb.g;
            cv(i, 2) = rgb.b;
            sv(i) = static_cast<std::int32_t>(c.points[i].source);
          }
          py::dict d;
          d["positions"] = points_to_array(c.positions());
          d["colors"] = colors;
          d["sources"] = sources;
          return d;
        },
        py::arg("path"));

  py::class_<ProximityModel>(m, "ProximityModel")
      .def_static("load", &ProximityModel::load, py::arg("path"))
      .def("save", &ProximityModel::save, py::arg("path"))
      .def("score",
           [](const ProximityModel& self, const PointArray& points) {
             const auto s = self.score_batch(points_from_array(points));
             return py::array_t<double>(static_cast<py::ssize_t>(s.size()), s.data());
           },
           py::arg("points"))
      .def("score_with_gradient",
           [](const ProximityModel& self, const PointArray& points) {
             std::vector<Vec3> grads;
             const auto s = self.score_batch_with_gradient(points_from_array(points), grads);
             return py::make_tuple(py::array_t<double>(static_cast<py::ssize_t>(s.size()), s.data()),
                                   points_to_array(grads));
           },
           py::arg("points"))
      .def_property_readonly("center",
                             [](const ProximityModel& self) {
                               const Vec3& c = self.normalization.center;
                               return py::make_tuple(c.x(), c.y(), c.z());
                             })
      .def_property_readonly("scale",
                             [](const ProximityModel& self) { return self.normalization.scale; });
}
