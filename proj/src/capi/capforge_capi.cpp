// SPDX-License-Identifier: Apache-2.0
#include "capforge/capforge.h"

#include "capforge/error.hpp"
#include "capforge/pipeline.hpp"
#include "capforge/synth.hpp"

#include <nlohmann/json.hpp>

#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <new>
#include <string>

struct cap_config {
    capforge::PipelineConfig cfg;
};

struct cap_dataset {
    capforge::EmbeddingDataset ds;
};

struct cap_model {
    capforge::AdapterModel model;
};

namespace {

thread_local std::string g_last_error;

cap_status status_for(capforge::ErrorKind k) {
    switch (k) {
        case capforge::ErrorKind::InvalidArgument: return CAP_E_INVALID;
        case capforge::ErrorKind::MissingFile: return CAP_E_IO;
        case capforge::ErrorKind::Format: return CAP_E_FORMAT;
        case capforge::ErrorKind::Numeric: return CAP_E_NUMERIC;
        case capforge::ErrorKind::Runtime: return CAP_E_INTERNAL;
    }
    return CAP_E_INTERNAL;
}

template <class F>
cap_status guarded(F&& f) {
    try {
        f();
        g_last_error.clear();
        return CAP_OK;
    } catch (const capforge::Error& e) {
        g_last_error = e.what();
        return status_for(e.kind());
    } catch (const nlohmann::json::exception& e) {
        g_last_error = std::string("json: ") + e.what();
        return CAP_E_FORMAT;
    } catch (const std::filesystem::filesystem_error& e) {
        g_last_error = e.what();
        return CAP_E_IO;
    } catch (const std::bad_alloc&) {
        g_last_error = "out of memory";
        return CAP_E_INTERNAL;
    } catch (const std::exception& e) {
        g_last_error = e.what();
        return CAP_E_INTERNAL;
    } catch (...) {
        g_last_error = "unknown error";
        return CAP_E_INTERNAL;
    }
}

char* dup_string(const std::string& s) {
    char* p = static_cast<char*>(std::malloc(s.size() + 1));
    if (!p) throw std::bad_alloc();
    std::memcpy(p, s.c_str(), s.size() + 1);
    return p;
}

void need(const void* p, const char* what) {
    if (!p) capforge::fail(capforge::ErrorKind::InvalidArgument, std::string(what) + " is NULL");
}

void write_text(const std::filesystem::path& file, const std::string& text) {
    std::ofstream out(file, std::ios::binary | std::ios::trunc);
    capforge::require(static_cast<bool>(out), capforge::ErrorKind::MissingFile, "cannot write " + file.string());
    out << text;
    capforge::require(static_cast<bool>(out), capforge::ErrorKind::Runtime, "write failed: " + file.string());
}

}  // namespace

extern "C" {

const char* cap_version(void) { return "0.1.0"; }

const char* cap_last_error(void) { return g_last_error.c_str(); }

void cap_string_free(char* s) { std::free(s); }

cap_status cap_config_create(cap_config** out) {
    return guarded([&] {
        need(out, "out");
        *out = new cap_config();
    });
}

void cap_config_destroy(cap_config* cfg) { delete cfg; }

cap_status cap_config_set(cap_config* cfg, const char* key, const char* value) {
    return guarded([&] {
        need(cfg, "cfg");
        need(key, "key");
        need(value, "value");
        cfg->cfg.set(key, value);
    });
}

cap_status cap_config_get(const cap_config* cfg, const char* key, char** out_value) {
    return guarded([&] {
        need(cfg, "cfg");
        need(key, "key");
        need(out_value, "out_value");
        *out_value = dup_string(cfg->cfg.get(key));
    });
}

cap_status cap_config_load_file(cap_config* cfg, const char* path) {
    return guarded([&] {
        need(cfg, "cfg");
        need(path, "path");
        cfg->cfg.load_file(path);
    });
}

cap_status cap_config_apply_env(cap_config* cfg, const char* const* envp) {
    return guarded([&] {
        need(cfg, "cfg");
        if (envp) cfg->cfg.apply_env(envp);
    });
}

cap_status cap_config_to_json(const cap_config* cfg, char** out_json) {
    return guarded([&] {
        need(cfg, "cfg");
        need(out_json, "out_json");
        *out_json = dup_string(cfg->cfg.to_json().dump(2));
    });
}

cap_status cap_synth_generate(const cap_config* cfg, const char* out_dir) {
    return guarded([&] {
        need(cfg, "cfg");
        need(out_dir, "out_dir");
        const auto& c = cfg->cfg;
        capforge::SynthOutput out = capforge::generate(c.synth);
        switch (c.train.paradigm) {
            case capforge::Paradigm::UL: break;
            case capforge::Paradigm::SSL:
                out.dataset.splits = capforge::make_ssl_split(out.dataset, c.ssl_per_class, c.synth.seed);
                break;
            case capforge::Paradigm::TRZSL:
                out.dataset.splits = capforge::make_trzsl_split(out.dataset, c.seen_fraction, c.synth.seed);
                break;
        }
        capforge::validate(out.dataset);
        capforge::write_synth(out, c.synth, out_dir);
    });
}

cap_status cap_dataset_load(const char* dir, cap_dataset** out) {
    return guarded([&] {
        need(dir, "dir");
        need(out, "out");
        auto* h = new cap_dataset();
        try {
            h->ds = capforge::load_dataset(dir);
        } catch (...) {
            delete h;
            throw;
        }
        *out = h;
    });
}

void cap_dataset_destroy(cap_dataset* ds) { delete ds; }

cap_status cap_dataset_shape(const cap_dataset* ds, size_t* n_samples, size_t* n_classes, size_t* dim) {
    return guarded([&] {
        need(ds, "ds");
        if (n_samples) *n_samples = ds->ds.n_samples;
        if (n_classes) *n_classes = ds->ds.n_classes;
        if (dim) *dim = ds->ds.dim;
    });
}

cap_status cap_detect(const cap_dataset* ds, const cap_config* cfg, char** out_report_json) {
    return guarded([&] {
        need(ds, "ds");
        need(cfg, "cfg");
        need(out_report_json, "out_report_json");
        const auto prepared = capforge::prepare_paradigm(ds->ds, cfg->cfg);
        const auto report = capforge::run_detect(prepared, cfg->cfg);
        *out_report_json = dup_string(capforge::report_to_json(report, prepared, cfg->cfg).dump(2));
    });
}

cap_status cap_pseudolabel(const cap_dataset* ds, const cap_config* cfg, const char* report_json, char** out_pl_json) {
    return guarded([&] {
        need(ds, "ds");
        need(cfg, "cfg");
        need(report_json, "report_json");
        need(out_pl_json, "out_pl_json");
        const auto prepared = capforge::prepare_paradigm(ds->ds, cfg->cfg);
        const auto report = capforge::report_from_json(nlohmann::json::parse(report_json));
        auto provider = capforge::make_provider(cfg->cfg, prepared.dim);
        const auto res = capforge::run_pseudolabel(prepared, cfg->cfg, report, *provider);
        *out_pl_json = dup_string(capforge::pl_to_json(res.pl, prepared, cfg->cfg, res.enhanced).dump(2));
    });
}

cap_status cap_train(const cap_dataset* ds, const cap_config* cfg, const char* pl_json, cap_model** out_model,
                     char** out_metric_log) {
    return guarded([&] {
        need(ds, "ds");
        need(cfg, "cfg");
        need(pl_json, "pl_json");
        need(out_model, "out_model");
        const auto prepared = capforge::prepare_paradigm(ds->ds, cfg->cfg);
        const auto pl = capforge::pl_from_json(nlohmann::json::parse(pl_json), prepared);
        auto res = capforge::run_train(prepared, cfg->cfg, pl);
        std::string log;
        if (out_metric_log) {
            log = nlohmann::json{{"config", cfg->cfg.to_json()}}.dump() + "\n" + capforge::metric_log_jsonl(res.log);
        }
        auto* h = new cap_model{std::move(res.model)};
        if (out_metric_log) {
            try {
                *out_metric_log = dup_string(log);
            } catch (...) {
                delete h;
                throw;
            }
        }
        *out_model = h;
    });
}

cap_status cap_model_create_zero(size_t dim, double gamma, cap_model** out) {
    return guarded([&] {
        need(out, "out");
        capforge::require(dim > 0, capforge::ErrorKind::InvalidArgument, "dim must be positive");
        *out = new cap_model{capforge::AdapterModel::zero_init(dim, gamma)};
    });
}

void cap_model_destroy(cap_model* m) { delete m; }

cap_status cap_model_save(const cap_model* m, const cap_config* cfg, const char* dir) {
    return guarded([&] {
        need(m, "model");
        need(dir, "dir");
        m->model.save(dir, cfg ? cfg->cfg.to_json().dump() : std::string("{}"));
    });
}

cap_status cap_model_load(const char* dir, cap_model** out) {
    return guarded([&] {
        need(dir, "dir");
        need(out, "out");
        *out = new cap_model{capforge::AdapterModel::load(dir)};
    });
}

cap_status cap_model_logits(const cap_model* m, const cap_dataset* ds, double* out, size_t out_len) {
    return guarded([&] {
        need(m, "model");
        need(ds, "ds");
        need(out, "out");
        const auto& d = ds->ds;
        capforge::require(m->model.dim == d.dim, capforge::ErrorKind::InvalidArgument, "model/dataset dimension mismatch");
        capforge::require(out_len >= d.n_samples * d.n_classes, capforge::ErrorKind::InvalidArgument,
                          "output buffer too small");
        const capforge::Matrix text_out = capforge::text_forward(m->model, d.texts(), false);
        const capforge::Matrix z = capforge::batch_logits(m->model, text_out, d.images(), capforge::Branch::Inference);
        for (std::size_t i = 0; i < d.n_samples; ++i)
            for (std::size_t c = 0; c < d.n_classes; ++c)
                out[i * d.n_classes + c] = z(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c));
    });
}

cap_status cap_eval(const cap_model* m, const cap_dataset* ds, const cap_config* cfg, const char* pl_json,
                    const char* out_dir, char** out_json) {
    return guarded([&] {
        need(m, "model");
        need(ds, "ds");
        need(cfg, "cfg");
        const auto prepared = capforge::prepare_paradigm(ds->ds, cfg->cfg);
        capforge::PseudolabelSet pl;
        const bool has_pl = pl_json != nullptr;
        if (has_pl) pl = capforge::pl_from_json(nlohmann::json::parse(pl_json), prepared);
        const auto res = capforge::run_eval(m->model, prepared, cfg->cfg, has_pl ? &pl : nullptr);
        const std::string text = res.report.dump(2);
        if (out_dir) {
            const std::filesystem::path dir(out_dir);
            std::filesystem::create_directories(dir);
            write_text(dir / "eval.json", text + "\n");
            write_text(dir / "per_class.csv", res.per_class_csv);
            write_text(dir / "confidence_density.csv", res.confidence_csv);
        }
        if (out_json) *out_json = dup_string(text);
    });
}

}  // extern "C"
