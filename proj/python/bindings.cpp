#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "afft/correspondence.hpp"
#include "afft/error.hpp"
#include "afft/evaluation.hpp"
#include "afft/grasp.hpp"
#include "afft/pipeline.hpp"

namespace py = pybind11;
using namespace afft;

namespace {

py::array_t<float> tensor_to_array(const Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  py::array_t<float> a(shape);
  std::copy(t.data().begin(), t.data().end(), a.mutable_data());
  return a;
}

Tensor array_to_tensor(const py::array_t<float, py::array::c_style | py::array::forcecast>& a) {
  std::vector<std::uint64_t> shape;
  for (py::ssize_t i = 0; i < a.ndim(); ++i) shape.push_back(static_cast<std::uint64_t>(a.shape(i)));
  return Tensor(std::move(shape), std::vector<float>(a.data(), a.data() + a.size()));
}

GroundTruthMask array_to_mask(const py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>& a) {
  if (a.ndim() != 2) throw py::value_error("mask must be a 2-D uint8 array");
  GroundTruthMask m(static_cast<int>(a.shape(1)), static_cast<int>(a.shape(0)));
  std::copy(a.data(), a.data() + a.size(), m.values.begin());
  return m;
}

std::vector<Pixel> to_pixels(const std::vector<std::pair<int, int>>& pts) {
  std::vector<Pixel> out;
  for (const auto& [x, y] : pts) out.push_back({x, y});
  return out;
}

std::vector<std::pair<int, int>> from_pixels(const std::vector<Pixel>& pts) {
  std::vector<std::pair<int, int>> out;
  for (const auto& p : pts) out.emplace_back(p.x, p.y);
  return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Affordance transfer core";

  static py::exception<Error> error_type(m, "AfftError");
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      py::object exc = py::handle(error_type.ptr())(e.what());
      exc.attr("code") = std::string(to_string(e.code()));
      exc.attr("module") = std::string(owning_module(e.code()));
      PyErr_SetObject(error_type.ptr(), exc.ptr());
    }
  });

  m.def("read_tensor", [](const std::filesystem::path& p) { return tensor_to_array(read_tensor(p)); });
  m.def("write_tensor", [](const py::array_t<float, py::array::c_style | py::array::forcecast>& a,
                           const std::filesystem::path& p) { write_tensor(array_to_tensor(a), p); });

  m.def("metric_sr", [](const std::vector<std::pair<int, int>>& pts, const py::array_t<std::uint8_t>& mask,
                        int threshold) { return metric_sr(to_pixels(pts), array_to_mask(mask), threshold); },
        py::arg("points"), py::arg("mask"), py::arg("threshold") = kDefaultMaskThreshold);
  m.def("metric_nss", [](const std::vector<std::pair<int, int>>& pts, const py::array_t<std::uint8_t>& mask) {
    return metric_nss(to_pixels(pts), array_to_mask(mask));
  });
  m.def("metric_dtm", [](const std::vector<std::pair<int, int>>& pts, const py::array_t<std::uint8_t>& mask,
                         int threshold) { return metric_dtm(to_pixels(pts), array_to_mask(mask), threshold); },
        py::arg("points"), py::arg("mask"), py::arg("threshold") = kDefaultMaskThreshold);

  m.def("cosine_similarity", [](const std::vector<float>& a, const std::vector<float>& b) {
    return cosine_similarity(std::span<const float>(a), std::span<const float>(b));
  });

  m.def("dihedral_apply", [](const std::string& code, int x, int y, int w, int h) {
    const Pixel q = apply(parse_dihedral(code), Pixel{x, y}, Size{w, h});
    return std::pair{q.x, q.y};
  });
  m.def("dihedral_codes", [] {
    std::vector<std::string> out;
    for (const auto d : kAllTransforms) out.emplace_back(to_string(d));
    return out;
  });

  m.def("generate_fixtures", [](const std::filesystem::path& out, std::uint64_t seed) {
    FixtureOptions opt;
    opt.seed = seed;
    const auto c = generate_fixtures(out, opt);
    py::dict d;
    d["videos"] = c.videos;
    d["faulty_videos"] = c.faulty_videos;
    d["manifest_identical"] = c.manifest_identical;
    d["manifest_transformed"] = c.manifest_transformed;
    d["manifest_all"] = c.manifest_all;
    d["grasp"] = c.grasp;
    return d;
  }, py::arg("out"), py::arg("seed") = 7);

  m.def("extract", [](const std::filesystem::path& videos, const std::filesystem::path& memory, std::uint64_t seed) {
    ExtractionConfig cfg;
    cfg.rng_seed = seed;
    AffordanceMemory mem = AffordanceMemory::open(memory);
    const auto s = run_extract(videos, mem, cfg);
    std::vector<std::pair<std::string, std::string>> skipped;
    for (const auto& k : s.skipped) skipped.emplace_back(k.item, k.reason);
    return py::make_tuple(s.records, skipped);
  }, py::arg("videos"), py::arg("memory"), py::arg("seed") = 7);

  m.def("transfer", [](const std::filesystem::path& memory, const std::filesystem::path& target,
                       const std::string& category, int topk, std::uint64_t seed) {
    const AffordanceMemory mem = AffordanceMemory::open(memory);
    PatchgramEmbedder enc;
    ToyGridExtractor fx;
    PipelineConfig cfg;
    cfg.top_k = topk;
    cfg.transfer.rng_seed = seed;
    const auto r = run_pipeline(mem, read_image(target), category, target.stem().string(), enc, fx, cfg);
    py::dict d;
    d["points"] = from_pixels(r.prediction.points);
    d["source"] = r.transfer.source_id;
    d["similarity"] = r.transfer.mean_similarity;
    std::vector<std::string> considered;
    for (const auto& s : r.retrieved) considered.push_back(s.record_id);
    d["considered"] = considered;
    return d;
  }, py::arg("memory"), py::arg("target"), py::arg("category"), py::arg("topk") = 5, py::arg("seed") = 7);

  m.def("select_grasp", [](const std::vector<std::array<double, 3>>& translations, const std::array<double, 3>& p) {
    std::vector<GraspCandidate> cands(translations.size());
    for (std::size_t i = 0; i < translations.size(); ++i) {
      cands[i].translation = {translations[i][0], translations[i][1], translations[i][2]};
    }
    return select_grasp_index(cands, ContactPoint3D{{p[0], p[1], p[2]}});
  });
}
