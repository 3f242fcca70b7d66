#include "fpad/checkpoint.hpp"
#include "fpad/densenet.hpp"
#include "fpad/error.hpp"
#include "fpad/fsutil.hpp"
#include "fpad/image.hpp"
#include "fpad/metrics.hpp"
#include "fpad/patch.hpp"
#include "fpad/protocol.hpp"
#include "fpad/train.hpp"

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

namespace py = pybind11;
using namespace fpad;

namespace {

Species species_arg(const std::string& s) {
    if (auto sp = parse_species_lenient(s)) return *sp;
    throw ConfigError("unknown species '" + s + "'");
}

// Accepts HxW or HxWxC uint8 arrays.
ImageBuffer image_arg(const py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>& a) {
    if (a.ndim() != 2 && a.ndim() != 3) throw ShapeError("image", "expected an HxW or HxWxC uint8 array");
    const auto h = static_cast<std::size_t>(a.shape(0)), w = static_cast<std::size_t>(a.shape(1));
    const std::size_t c = a.ndim() == 3 ? static_cast<std::size_t>(a.shape(2)) : 1;
    if (c != 1 && c != 3) throw ShapeError("image", "expected 1 or 3 channels");
    return ImageBuffer(w, h, c, std::vector<std::uint8_t>(a.data(), a.data() + a.size()));
}

py::array_t<std::uint8_t> image_out(const ImageBuffer& img) {
    std::vector<py::ssize_t> shape{static_cast<py::ssize_t>(img.height()), static_cast<py::ssize_t>(img.width())};
    if (img.channels() == 3) shape.push_back(3);
    py::array_t<std::uint8_t> out(shape);
    std::copy(img.data().begin(), img.data().end(), out.mutable_data());
    return out;
}

py::dict report_dict(const EvalReport& r) {
    py::dict d;
    d["threshold"] = r.threshold;
    py::list species;
    for (const auto& s : r.species) {
        py::dict e;
        e["species"] = std::string(species_code(s.species));
        e["n_attacks"] = s.n_attacks;
        e["n_misclassified"] = s.n_misclassified;
        e["apcer_percent"] = s.apcer_percent();
        e["unknown"] = s.unknown;
        species.append(e);
    }
    d["species"] = species;
    py::list omitted;
    for (Species s : r.omitted) omitted.append(std::string(species_code(s)));
    d["omitted"] = omitted;
    if (r.bonafide) {
        py::dict b;
        b["n_live"] = r.bonafide->n_live;
        b["n_misclassified"] = r.bonafide->n_misclassified;
        b["bpcer_percent"] = r.bonafide->bpcer_percent();
        d["bonafide"] = b;
    } else {
        d["bonafide"] = py::none();
    }
    if (r.deer)
        d["deer"] = py::dict(py::arg("eer_percent") = r.deer->eer_percent, py::arg("threshold") = r.deer->threshold);
    else
        d["deer"] = py::none();
    return d;
}

class Model {
public:
    explicit Model(const std::filesystem::path& path) : ckpt_(load_checkpoint(path)) {
        ckpt_.model.set_mode(Mode::Eval);
    }

    std::vector<double> score(const std::vector<py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>>& arrays,
                              std::size_t batch_size) {
        std::vector<ImageBuffer> images;
        for (const auto& a : arrays) images.push_back(image_arg(a));
        const Preprocess pre = preprocess_from_metadata(ckpt_.model.config(), ckpt_.metadata);
        py::gil_scoped_release release;
        return score_images(ckpt_.model, images, pre, batch_size);
    }

    const DenseNetConfig& config() const { return ckpt_.model.config(); }
    const std::map<std::string, std::string>& metadata() const { return ckpt_.metadata; }
    std::size_t param_count() { return ckpt_.model.param_count(); }

private:
    Checkpoint ckpt_;
};

}  // namespace

PYBIND11_MODULE(_fpad, m) {
    m.doc() = "Fingertip presentation attack detection core";

    static py::exception<Error> error(m, "FpadError", PyExc_RuntimeError);
    py::register_exception_translator([](std::exception_ptr p) {
        try {
            if (p) std::rethrow_exception(p);
        } catch (const Error& e) {
            py::object inst = py::reinterpret_borrow<py::object>(error.ptr())(e.what());
            inst.attr("code") = e.code();
            PyErr_SetObject(error.ptr(), inst.ptr());
        }
    });

    py::class_<DenseNetConfig>(m, "DenseNetConfig")
        .def(py::init<>())
        .def_readwrite("growth_rate", &DenseNetConfig::growth_rate)
        .def_readwrite("block_layers", &DenseNetConfig::block_layers)
        .def_readwrite("stem_filters", &DenseNetConfig::stem_filters)
        .def_readwrite("stem_kernel", &DenseNetConfig::stem_kernel)
        .def_readwrite("bottleneck", &DenseNetConfig::bottleneck)
        .def_readwrite("compression", &DenseNetConfig::compression)
        .def_readwrite("input_channels", &DenseNetConfig::input_channels)
        .def_readwrite("input_size", &DenseNetConfig::input_size)
        .def("__eq__", [](const DenseNetConfig& a, const DenseNetConfig& b) { return a == b; })
        .def("__repr__", [](const DenseNetConfig& c) { return "DenseNetConfig(" + config_to_string(c) + ")"; });

    m.def("tiny_config", &tiny_config);
    m.def("validate_config", &validate_config);
    m.def("count_trainable_params", &count_trainable_params);
    m.def("count_conv_layers", &count_conv_layers);
    m.def("channel_plan", [](const DenseNetConfig& c) {
        const ChannelPlan p = channel_plan(c);
        return py::dict(py::arg("stem") = p.stem, py::arg("block_exit") = p.block_exit,
                        py::arg("transition_out") = p.transition_out, py::arg("classifier_in") = p.classifier_in);
    });

    m.def("laplacian_variance", [](const py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>& a) {
        return laplacian_variance(to_grayscale(image_arg(a)));
    }, py::arg("image"));
    m.def("select_blur_threshold", [](const std::vector<double>& s, double f) { return select_blur_threshold(s, f); },
          py::arg("scores"), py::arg("removal_fraction"));
    m.def("removed_fraction", [](const std::vector<double>& s, double t) { return removed_fraction(s, t); },
          py::arg("scores"), py::arg("threshold"));
    m.def("read_png", [](const std::filesystem::path& p) { return image_out(read_png(p)); });
    m.def("write_png", [](const py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>& a,
                          const std::filesystem::path& p) { write_png(image_arg(a), p); });

    m.def("middle_window", [](std::size_t dim, std::size_t patch) {
        const PatchWindow w = middle_window(dim, patch);
        return py::make_tuple(w.lo, w.hi);
    });
    m.def("default_patch_counts", [] {
        std::map<std::string, std::size_t> out;
        for (const auto& [s, n] : default_patch_counts()) out[std::string(species_code(s))] = n;
        return out;
    });
    m.def("extract_center_patches",
          [](const py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>& a, const std::string& species,
             std::size_t patch_size, std::uint64_t seed) {
              PatchSpec spec;
              spec.patch_size = patch_size;
              spec.seed = seed;
              py::list out;
              for (const auto& p : extract_center_patches(image_arg(a), spec, species_arg(species)))
                  out.append(py::make_tuple(p.x, p.y, image_out(p.image)));
              return out;
          },
          py::arg("image"), py::arg("species"), py::arg("patch_size") = 256, py::arg("seed") = 0);

    m.def("compute_report",
          [](const std::vector<std::tuple<std::string, std::string, double>>& rows, double threshold,
             const std::vector<std::string>& unknown) {
              std::vector<ScoredSample> scored;
              for (const auto& [id, sp, score] : rows) scored.push_back({id, species_arg(sp), score, Split::Test});
              std::set<Species> u;
              for (const auto& s : unknown) u.insert(species_arg(s));
              return report_dict(compute_report(scored, threshold, u));
          },
          py::arg("rows"), py::arg("threshold") = 0.5, py::arg("unknown_species") = std::vector<std::string>{"LL", "PP"});
    m.def("format_percent", &format_percent);

    m.def("read_checkpoint_info", [](const std::filesystem::path& p) {
        const CheckpointInfo i = read_checkpoint_info(read_file(p));
        return py::dict(py::arg("schema_version") = i.schema_version, py::arg("config") = i.config,
                        py::arg("param_count") = i.param_count, py::arg("tensor_count") = i.tensor_count,
                        py::arg("payload_bytes") = i.payload_bytes, py::arg("sha256") = i.sha256);
    });

    py::class_<Model>(m, "Model")
        .def(py::init<const std::filesystem::path&>(), py::arg("path"))
        .def("score", &Model::score, py::arg("images"), py::arg("batch_size") = 64)
        .def_property_readonly("config", &Model::config)
        .def_property_readonly("metadata", &Model::metadata)
        .def_property_readonly("param_count", &Model::param_count);
}
