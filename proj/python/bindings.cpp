#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "latentdiff/error.hpp"
#include "latentdiff/field_mapper.hpp"
#include "latentdiff/hash.hpp"
#include "latentdiff/job_io.hpp"
#include "latentdiff/mock_backend.hpp"
#include "latentdiff/sd_adapter.hpp"
#include "latentdiff/tensor_ops.hpp"

namespace py = pybind11;
using namespace latentdiff;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;

LatentTensor to_tensor(const FloatArray& a) {
    Shape shape(a.shape(), a.shape() + a.ndim());
    if (shape.empty()) shape = {1};
    return LatentTensor(std::move(shape), std::vector<float>(a.data(), a.data() + a.size()));
}

FloatArray to_array(const LatentTensor& t) {
    std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
    FloatArray out(shape);
    std::copy(t.data().begin(), t.data().end(), out.mutable_data());
    return out;
}

std::vector<LatentTensor> to_tensors(const std::vector<FloatArray>& xs) {
    std::vector<LatentTensor> out;
    out.reserve(xs.size());
    for (const auto& x : xs) out.push_back(to_tensor(x));
    return out;
}

const Backend& mock() {
    static const auto backend = make_backend("mock-v1");
    return *backend;
}

py::dict counters(const HookCounters& c) {
    py::dict d;
    d["concept_query"] = c.concept_query;
    d["shape_bias"] = c.shape_bias;
    d["feature_embedding"] = c.feature_embedding;
    return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "latentdiff core bindings";

    static py::exception<Error> error_type(m, "LatentDiffError", PyExc_ValueError);
    py::register_exception_translator([](std::exception_ptr p) {
        try {
            if (p) std::rethrow_exception(p);
        } catch (const Error& e) {
            py::object exc = py::reinterpret_borrow<py::object>(error_type.ptr())(e.what());
            exc.attr("code") = std::string(to_string(e.code()));
            exc.attr("field") = e.field().empty() ? py::object(py::none()) : py::str(e.field());
            PyErr_SetObject(error_type.ptr(), exc.ptr());
        }
    });

    m.def("lerp", [](const FloatArray& a, const FloatArray& b, double alpha) {
        return to_array(lerp(to_tensor(a), to_tensor(b), alpha));
    }, py::arg("a"), py::arg("b"), py::arg("alpha"));
    m.def("slerp", [](const FloatArray& a, const FloatArray& b, double alpha) {
        return to_array(slerp(to_tensor(a), to_tensor(b), alpha));
    }, py::arg("a"), py::arg("b"), py::arg("alpha"));
    m.def("affine_combine", [](const std::vector<FloatArray>& xs, const std::vector<double>& weights) {
        return to_array(affine_combine(to_tensors(xs), Weights(weights)));
    }, py::arg("inputs"), py::arg("weights"));

    m.def("encode_prompt", [](const std::string& text) { return to_array(mock().encode_prompt(text)); });
    m.def("initial_latent", [](std::uint64_t seed) { return to_array(mock().initial_latent(seed)); });

    m.def("run_job", [](const std::string& job_json) {
        const GenerationJob job = parse_job(job_json);
        std::optional<GenerationResult> result;
        {
            py::gil_scoped_release release;
            result = run_generation(job);
        }
        const GenerationResult& r = *result;
        py::dict out;
        out["latent"] = to_array(r.final_latent);
        out["job_digest"] = hex_digest(r.job_digest);
        out["latent_digest"] = hex_digest(r.latent_digest);
        out["hook_counters"] = counters(r.hook_counters);
        return out;
    }, py::arg("job_json"), "Run a generation job given as JSON text; mock backend only.");

    m.def("job_digest", [](const std::string& job_json) { return hex_digest(job_digest(parse_job(job_json))); });

    m.def("sample_grid", [](std::size_t arity, std::size_t resolution) {
        std::vector<std::vector<double>> out;
        for (const Weights& w : sample_grid(arity, resolution)) out.emplace_back(w.values().begin(), w.values().end());
        return out;
    }, py::arg("arity"), py::arg("resolution"));
    m.def("lattice_point_count", &lattice_point_count, py::arg("arity"), py::arg("resolution"));
    m.def("classify", [](double score, double t_low, double t_high) {
        return std::string(to_string(classify(score, t_low, t_high)));
    }, py::arg("score"), py::arg("t_low") = 0.25, py::arg("t_high") = 0.6);

    m.def("plan_attachments", [](const std::string& adapter_json, const std::string& job_json) {
        const AdapterConfig config = parse_adapter_config(adapter_json);
        py::list out;
        for (const Attachment& a : plan_attachments(config, parse_job(job_json))) {
            out.append(py::make_tuple(std::string(to_string(a.kind)), a.target_id));
        }
        return out;
    }, py::arg("adapter_json"), py::arg("job_json"));

    m.def("fnv1a64", [](const py::bytes& data) { return fnv1a64(std::string_view(data)); });
}
