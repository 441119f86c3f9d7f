#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <map>
#include <string>
#include <vector>

#include "agentsim/audit.hpp"
#include "agentsim/digest.hpp"
#include "agentsim/error.hpp"
#include "agentsim/multiagent.hpp"
#include "agentsim/runner.hpp"
#include "agentsim/scenario.hpp"
#include "agentsim/trace.hpp"

namespace py = pybind11;
using json = nlohmann::json;

namespace {

py::object json_to_py(const json& j) {
    switch (j.type()) {
        case json::value_t::null:
            return py::none();
        case json::value_t::boolean:
            return py::bool_(j.get<bool>());
        case json::value_t::number_integer:
            return py::int_(j.get<int64_t>());
        case json::value_t::number_unsigned:
            return py::int_(j.get<uint64_t>());
        case json::value_t::number_float:
            return py::float_(j.get<double>());
        case json::value_t::string:
            return py::str(j.get<std::string>());
        case json::value_t::array: {
            py::list out;
            for (const auto& item : j) out.append(json_to_py(item));
            return out;
        }
        case json::value_t::object: {
            py::dict out;
            for (const auto& [k, v] : j.items())
                out[py::str(k)] = json_to_py(v);
            return out;
        }
        default:
            return py::none();
    }
}

json py_to_json(const py::handle& obj) {
    if (obj.is_none()) return nullptr;
    if (py::isinstance<py::bool_>(obj)) return obj.cast<bool>();
    if (py::isinstance<py::int_>(obj)) return obj.cast<int64_t>();
    if (py::isinstance<py::float_>(obj)) return obj.cast<double>();
    if (py::isinstance<py::str>(obj)) return obj.cast<std::string>();
    if (py::isinstance<py::list>(obj) || py::isinstance<py::tuple>(obj)) {
        json out = json::array();
        for (const auto& item : obj) out.push_back(py_to_json(item));
        return out;
    }
    if (py::isinstance<py::dict>(obj)) {
        json out = json::object();
        for (const auto& item : obj.cast<py::dict>())
            out[item.first.cast<std::string>()] = py_to_json(item.second);
        return out;
    }
    throw py::type_error("unsupported value for json conversion");
}

agentsim::runner::Overrides make_overrides(
    py::object seed, py::object k_max, py::object t_max,
    const std::map<std::string, bool>& inject,
    const std::map<std::string, bool>& mitigate) {
    agentsim::runner::Overrides ov;
    if (!seed.is_none()) ov.seed = seed.cast<uint64_t>();
    if (!k_max.is_none()) ov.k_max = k_max.cast<int64_t>();
    if (!t_max.is_none()) ov.t_max = t_max.cast<int64_t>();
    ov.inject = inject;
    ov.mitigate = mitigate;
    return ov;
}

std::vector<std::vector<json>> load_corpus(
    const std::vector<std::string>& trace_paths) {
    std::vector<std::vector<json>> corpus;
    for (const auto& path : trace_paths) {
        std::vector<json> events;
        for (const auto& line : agentsim::trace::read_lines(path)) {
            try {
                events.push_back(json::parse(line));
            } catch (const json::parse_error&) {
                throw agentsim::Error("invalid-corpus",
                                      "unparseable line in " + path);
            }
        }
        corpus.push_back(std::move(events));
    }
    return corpus;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "governed agent runtime and failure-injection simulator";

    py::register_exception<agentsim::Error>(m, "AgentsimError");

    m.def(
        "load_scenario",
        [](const std::string& path) {
            auto cfg = agentsim::scenario::load_scenario(path);
            py::dict out;
            out["id"] = cfg.id;
            out["description"] = cfg.description;
            out["seed"] = cfg.seed;
            out["digest"] = cfg.digest;
            out["units"] = cfg.unit_names();
            out["doc"] = json_to_py(cfg.doc);
            return out;
        },
        py::arg("path"),
        "Parse and validate a scenario file; returns id, digest and units.");

    m.def(
        "run_scenario",
        [](const std::string& path, py::object out_dir, py::object seed,
           py::object k_max, py::object t_max,
           const std::map<std::string, bool>& inject,
           const std::map<std::string, bool>& mitigate) {
            auto cfg = agentsim::scenario::load_scenario(path);
            auto ov = make_overrides(seed, k_max, t_max, inject, mitigate);
            if (!out_dir.is_none()) {
                json manifest = agentsim::runner::run_to_files(
                    cfg, ov, out_dir.cast<std::string>());
                return json_to_py(manifest);
            }
            auto outcomes = agentsim::runner::execute_all(cfg, ov);
            py::list units;
            for (const auto& oc : outcomes) {
                py::dict u;
                u["unit"] = oc.unit;
                u["run_id"] = oc.run_id;
                u["report"] = json_to_py(oc.report);
                py::list evs;
                for (const auto& ev : oc.events)
                    evs.append(json_to_py(ev.to_json()));
                u["events"] = evs;
                units.append(u);
            }
            py::dict out;
            out["scenario"] = cfg.id;
            out["units"] = units;
            return py::object(out);
        },
        py::arg("path"), py::arg("out_dir") = py::none(),
        py::arg("seed") = py::none(), py::arg("k_max") = py::none(),
        py::arg("t_max") = py::none(),
        py::arg("inject") = std::map<std::string, bool>{},
        py::arg("mitigate") = std::map<std::string, bool>{},
        "Execute every unit of a scenario. With out_dir, write trace and "
        "report files and return the manifest; otherwise return events "
        "in memory.");

    m.def(
        "replay",
        [](const std::string& scenario_path, const std::string& trace_path) {
            auto cfg = agentsim::scenario::load_scenario(scenario_path);
            auto verdict = agentsim::runner::replay_trace(cfg, trace_path);
            return json_to_py(verdict.to_json());
        },
        py::arg("scenario_path"), py::arg("trace_path"),
        "Re-execute the recorded unit and compare hash chains.");

    m.def(
        "audit",
        [](const std::string& scenario_path,
           const std::vector<std::string>& trace_paths) {
            auto cfg = agentsim::scenario::load_scenario(scenario_path);
            agentsim::tools::ToolRegistry registry;
            for (const auto& spec : cfg.tools) registry.register_tool(spec);
            agentsim::policy::PolicyEngine engine(cfg.rules);
            std::vector<std::pair<std::string, std::string>> reg_digests;
            for (const auto& [id, d] : registry.digests())
                reg_digests.emplace_back(id, d);
            auto report = agentsim::audit::run_audit(
                load_corpus(trace_paths), reg_digests, engine.rule_digests());
            return json_to_py(report.to_json());
        },
        py::arg("scenario_path"), py::arg("trace_paths"),
        "Check a trace corpus against the hardening checklist.");

    m.def(
        "verify_chain",
        [](const std::string& trace_path) {
            auto verdict = agentsim::trace::verify_chain_file(trace_path);
            return json_to_py(verdict.to_json());
        },
        py::arg("trace_path"), "Verify the hash chain of a trace file.");

    m.def(
        "verify_completeness",
        [](const std::string& trace_path) {
            std::vector<json> events;
            auto chain = agentsim::trace::verify_chain_file(trace_path, &events);
            if (!chain.ok)
                throw agentsim::Error("invalid-corpus",
                                      "chain broken at " +
                                          std::to_string(chain.broken_at));
            auto report = agentsim::trace::verify_completeness(events);
            return json_to_py(report.to_json());
        },
        py::arg("trace_path"),
        "Verify mandatory provenance fields across a trace file.");

    m.def(
        "sweep",
        [](const std::string& path, const std::vector<uint64_t>& seeds,
           const std::string& out_dir) {
            auto cfg = agentsim::scenario::load_scenario(path);
            json manifest = agentsim::runner::sweep_to_files(
                cfg, seeds, agentsim::runner::Overrides{}, out_dir);
            return json_to_py(manifest);
        },
        py::arg("path"), py::arg("seeds"), py::arg("out_dir"),
        "Run the simulation unit once per seed and write the traces.");

    m.def(
        "gini", [](const std::vector<double>& v) {
            return agentsim::multiagent::gini(v);
        },
        py::arg("allocation"),
        "Mean-absolute-difference concentration index in [0, 1).");

    m.def(
        "entropy_bits",
        [](const std::vector<double>& v) {
            return agentsim::multiagent::entropy_bits(v);
        },
        py::arg("distribution"), "Shannon entropy in bits.");

    m.def(
        "detect_cycle",
        [](const std::map<std::string, std::vector<std::string>>& adjacency) {
            auto verdict = agentsim::multiagent::detect_cycle(adjacency);
            return json_to_py(verdict.to_json());
        },
        py::arg("adjacency"),
        "Cycle check over a string-keyed adjacency map with witness.");

    m.def(
        "herding_metrics",
        [](const std::vector<double>& allocation,
           const std::vector<double>& selections) {
            auto hm = agentsim::multiagent::herding_metrics(allocation,
                                                            selections);
            py::dict out;
            out["gini"] = hm.gini;
            out["entropy_bits"] = hm.entropy_bits;
            return out;
        },
        py::arg("allocation"), py::arg("selections"),
        "Concentration and diversity metrics for a swarm round.");

    m.def(
        "canonical_digest",
        [](const py::handle& obj) {
            return agentsim::digest::of_json(py_to_json(obj));
        },
        py::arg("value"),
        "Digest of the canonical serialization of a json-like value.");
}
