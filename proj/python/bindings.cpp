// SPDX-License-Identifier: Apache-2.0
#include <cstring>
#include <sstream>

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "cli.hpp"
#include "mergeforge/error.hpp"
#include "mergeforge/evalmetrics.hpp"
#include "mergeforge/mergecore.hpp"
#include "mergeforge/schedule.hpp"
#include "mergeforge/search.hpp"
#include "mergeforge/tensorio.hpp"

namespace py = pybind11;
using namespace mergeforge;

namespace {

py::array to_numpy(const Tensor& t) {
    const auto dtype = t.dtype() == DType::F16 ? py::dtype("float16") : py::dtype("float32");
    std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
    py::array out(dtype, shape);
    std::memcpy(out.mutable_data(), t.bytes().data(), t.bytes().size());
    return out;
}

Tensor from_numpy(const py::array& in) {
    DType dtype;
    py::array arr;
    if (in.dtype().is(py::dtype("float16"))) {
        dtype = DType::F16;
        arr = py::array::ensure(in, py::array::c_style);
    } else {
        dtype = DType::F32;
        arr = py::array_t<float, py::array::c_style | py::array::forcecast>::ensure(in);
    }
    if (!arr) throw py::type_error("expected a numeric array");
    Shape shape(arr.shape(), arr.shape() + arr.ndim());
    std::vector<std::byte> bytes(static_cast<std::size_t>(arr.nbytes()));
    std::memcpy(bytes.data(), arr.data(), bytes.size());
    return Tensor(dtype, std::move(shape), std::move(bytes));
}

std::vector<const TensorArchive*> pointers(const std::vector<TensorArchive>& models) {
    std::vector<const TensorArchive*> out;
    for (const auto& m : models) out.push_back(&m);
    return out;
}

SignMode parse_sign_mode(const std::string& s) {
    if (s == "paper") return SignMode::Paper;
    if (s == "mass") return SignMode::Mass;
    throw py::value_error("sign_mode must be 'paper' or 'mass'");
}

TiesOptions ties_options(double density, const std::string& sign_mode, std::optional<std::vector<double>> weights,
                         const std::string& apply_to) {
    TiesOptions o;
    o.density = density;
    o.sign_mode = parse_sign_mode(sign_mode);
    o.weights = std::move(weights);
    if (apply_to == "deltas") o.apply_to = ApplyTo::Deltas;
    else if (apply_to == "raw") o.apply_to = ApplyTo::Raw;
    else throw py::value_error("apply_to must be 'deltas' or 'raw'");
    return o;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Checkpoint merging kernels, tensor archives and evaluation metrics";

    // Leaked on purpose: the translator may run until interpreter shutdown.
    static py::handle error_type = py::exception<Error>(m, "MergeforgeError", PyExc_RuntimeError).release();
    py::register_exception_translator([](std::exception_ptr p) {
        try {
            if (p) std::rethrow_exception(p);
        } catch (const Error& e) {
            py::object exc = py::reinterpret_borrow<py::object>(error_type)(e.what());
            exc.attr("code") = std::string(error_code_name(e.code()));
            exc.attr("detail") = e.detail();
            PyErr_SetObject(error_type.ptr(), exc.ptr());
        }
    });

    py::class_<TensorArchive>(m, "TensorArchive")
        .def(py::init<>())
        .def("__len__", &TensorArchive::size)
        .def("__contains__", [](const TensorArchive& a, const std::string& n) { return a.contains(n); })
        .def("__getitem__", [](const TensorArchive& a, const std::string& n) { return to_numpy(a.at(n)); })
        .def("__setitem__", [](TensorArchive& a, const std::string& n, const py::array& v) { a.set(n, from_numpy(v)); })
        .def("names", &TensorArchive::names)
        .def("dtype", [](const TensorArchive& a, const std::string& n) { return std::string(dtype_name(a.at(n).dtype())); })
        .def_property(
            "metadata", [](const TensorArchive& a) { return std::map<std::string, std::string>(a.metadata().begin(), a.metadata().end()); },
            [](TensorArchive& a, const std::map<std::string, std::string>& md) {
                a.metadata().clear();
                for (const auto& [k, v] : md) a.metadata()[k] = v;
            })
        .def("__eq__", [](const TensorArchive& a, const TensorArchive& b) { return a == b; })
        .def("__repr__", [](const TensorArchive& a) { return "<TensorArchive with " + std::to_string(a.size()) + " tensors>"; });

    m.def("read_archive", &read_archive, py::arg("path"));
    m.def("write_archive", &write_archive, py::arg("archive"), py::arg("path"));
    m.def("cast", [](const TensorArchive& a, const std::string& dtype) {
        TensorArchive out;
        out.metadata() = a.metadata();
        for (const auto& [n, t] : a.tensors()) out.add(n, cast(t, parse_dtype(dtype)));
        return out;
    }, py::arg("archive"), py::arg("dtype"));
    m.def("validate_compat", [](const std::vector<TensorArchive>& archives) {
        const auto r = validate_compat(std::span<const TensorArchive>(archives));
        py::dict d;
        py::list missing, shapes;
        for (const auto& x : r.missing) missing.append(py::make_tuple(x.name, x.archive_index));
        for (const auto& x : r.shape_mismatches) shapes.append(py::make_tuple(x.name, x.archive_index, x.expected, x.actual));
        d["ok"] = r.ok();
        d["missing"] = missing;
        d["shape_mismatches"] = shapes;
        return d;
    }, py::arg("archives"));

    m.def("compute_delta", [](const TensorArchive& model, const TensorArchive& base) {
        TensorArchive out;
        for (auto& [n, t] : compute_delta(model, base).deltas) out.add(n, t);
        return out;
    }, py::arg("model"), py::arg("base"));
    m.def("linear_merge", [](const std::vector<TensorArchive>& models, std::vector<double> alphas, unsigned threads) {
        return linear_merge(pointers(models), MergeWeights{std::move(alphas)}, Execution{threads});
    }, py::arg("models"), py::arg("alphas"), py::arg("threads") = 1);
    m.def("slerp_merge", [](const TensorArchive& a, const TensorArchive& b, double t, unsigned threads) {
        return slerp_merge(a, b, t, Execution{threads});
    }, py::arg("m1"), py::arg("m2"), py::arg("t"), py::arg("threads") = 1);
    m.def("ties_merge", [](const std::vector<TensorArchive>& models, const TensorArchive& base, double density,
                           const std::string& sign_mode, std::optional<std::vector<double>> weights,
                           const std::string& apply_to, unsigned threads) {
        return ties_merge(pointers(models), base, ties_options(density, sign_mode, std::move(weights), apply_to),
                          Execution{threads});
    }, py::arg("models"), py::arg("base"), py::arg("density") = 0.5, py::arg("sign_mode") = "paper",
       py::arg("weights") = py::none(), py::arg("apply_to") = "deltas", py::arg("threads") = 1);
    m.def("dare_ties_merge", [](const std::vector<TensorArchive>& models, const TensorArchive& base, double density,
                                double drop_prob, std::uint64_t seed, const std::string& sign_mode,
                                std::optional<std::vector<double>> weights, unsigned threads) {
        return dare_ties_merge(pointers(models), base, ties_options(density, sign_mode, std::move(weights), "deltas"),
                               DareOptions{drop_prob, seed}, Execution{threads});
    }, py::arg("models"), py::arg("base"), py::arg("density") = 0.5, py::arg("drop_prob") = 0.9,
       py::arg("seed") = 0, py::arg("sign_mode") = "paper", py::arg("weights") = py::none(), py::arg("threads") = 1);

    m.def("trim_by_magnitude", [](std::vector<double> v, double density) { return trim_by_magnitude(v, density); });
    m.def("eval_schedule", [](std::vector<double> anchors, double position) {
        return eval_schedule(BlendSchedule{std::move(anchors), std::nullopt}, position);
    }, py::arg("anchors"), py::arg("position"));
    m.def("layer_index_of", &layer_index_of, py::arg("name"));
    m.def("enumerate_grid", [](const std::string& method, std::vector<double> values, std::size_t arity) {
        GridSpec g;
        g.method = parse_merge_method(method);
        g.values = std::move(values);
        g.arity = arity;
        std::vector<std::vector<double>> out;
        for (const auto& c : enumerate_grid(g)) out.push_back(c.coefficients);
        return out;
    }, py::arg("method"), py::arg("values") = kDefaultGridValues, py::arg("arity") = 2);

    m.def("harm_change", [](std::uint64_t mh, std::uint64_t mt, std::uint64_t bh, std::uint64_t bt) {
        return harm_change({mh, mt}, {bh, bt});
    }, py::arg("model_harmful"), py::arg("model_total"), py::arg("base_harmful"), py::arg("base_total"));
    m.def("win_rate", [](std::uint64_t w, std::uint64_t l, std::uint64_t t) { return win_rate(PreferenceTally{w, l, t}); },
          py::arg("wins"), py::arg("losses"), py::arg("ties") = 0);
    m.def("aggregate_languages", &aggregate_languages, py::arg("per_language"));
    m.def("format_delta", &format_delta);

    m.def("run_cli", [](std::vector<std::string> args) {
        args.insert(args.begin(), "mergeforge");
        std::vector<const char*> argv;
        for (const auto& a : args) argv.push_back(a.c_str());
        std::ostringstream out, err;
        int status;
        {
            py::gil_scoped_release release;
            status = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
        }
        return py::make_tuple(status, out.str(), err.str());
    }, py::arg("args"));
}
