// SPDX-License-Identifier: Apache-2.0
// capforge command-line front end. Talks to the library only through capforge.h.
#include "capforge/capforge.h"

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

extern char** environ;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitValidation = 1;
constexpr int kExitRuntime = 2;

struct CliFailure {
    int code;
    std::string message;
};

int exit_code_for(cap_status s) {
    switch (s) {
        case CAP_OK: return kExitOk;
        case CAP_E_INVALID:
        case CAP_E_IO:
        case CAP_E_FORMAT: return kExitValidation;
        default: return kExitRuntime;
    }
}

void check(cap_status s) {
    if (s != CAP_OK) throw CliFailure{exit_code_for(s), cap_last_error()};
}

struct CString {
    char* p = nullptr;
    ~CString() { cap_string_free(p); }
    std::string str() const { return p ? std::string(p) : std::string(); }
};

struct ConfigHandle {
    cap_config* h = nullptr;
    ConfigHandle() { check(cap_config_create(&h)); }
    ~ConfigHandle() { cap_config_destroy(h); }
};

struct DatasetHandle {
    cap_dataset* h = nullptr;
    explicit DatasetHandle(const std::string& dir) { check(cap_dataset_load(dir.c_str(), &h)); }
    ~DatasetHandle() { cap_dataset_destroy(h); }
};

struct ModelHandle {
    cap_model* h = nullptr;
    ~ModelHandle() { cap_model_destroy(h); }
};

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CliFailure{kExitValidation, "missing input: " + path};
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const std::filesystem::path& path, const std::string& text) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw CliFailure{kExitRuntime, "cannot write " + path.string()};
    out << text;
    if (!text.empty() && text.back() != '\n') out << '\n';
}

// A flag that maps one-to-one onto a config key. Applied after the config
// file and environment so that flags win.
struct KeyFlag {
    std::string key;
    std::optional<std::string> value;
};

class Command {
public:
    Command(CLI::App& parent, const std::string& name, const std::string& help) : app_(parent.add_subcommand(name, help)) {
        app_->add_option("--config", config_file_, "key = value config file");
        app_->add_option("--set", overrides_, "extra KEY=VALUE config override (repeatable)");
        key_flag("--seed", "seed", "master seed; every random stream derives from it");
        key_flag("--paradigm", "paradigm", "ul, ssl or trzsl");
    }

    CLI::App* app() { return app_; }

    void key_flag(const std::string& flag, const std::string& key, const std::string& help) {
        flags_.push_back(std::make_unique<KeyFlag>(KeyFlag{key, std::nullopt}));
        app_->add_option(flag, flags_.back()->value, help + " [" + key + "]");
    }

    void apply(ConfigHandle& cfg) const {
        if (!config_file_.empty()) check(cap_config_load_file(cfg.h, config_file_.c_str()));
        check(cap_config_apply_env(cfg.h, environ));
        for (const auto& f : flags_)
            if (f->value) check(cap_config_set(cfg.h, f->key.c_str(), f->value->c_str()));
        for (const auto& kv : overrides_) {
            const auto eq = kv.find('=');
            if (eq == std::string::npos || eq == 0) throw CliFailure{kExitValidation, "--set expects KEY=VALUE, got '" + kv + "'"};
            check(cap_config_set(cfg.h, kv.substr(0, eq).c_str(), kv.substr(eq + 1).c_str()));
        }
    }

private:
    CLI::App* app_;
    std::string config_file_;
    std::vector<std::string> overrides_;
    std::vector<std::unique_ptr<KeyFlag>> flags_;
};

void add_train_flags(Command& c) {
    c.key_flag("--epochs", "epochs", "training epochs; the first is warmup");
    c.key_flag("--batch-size", "batch_size", "mini-batch size");
    c.key_flag("--lr", "lr", "peak learning rate");
    c.key_flag("--momentum", "momentum", "SGD momentum");
    c.key_flag("--weight-decay", "weight_decay", "weight decay");
    c.key_flag("--tau", "tau", "confidence threshold");
    c.key_flag("--margin-scale", "margin_scale", "base margin scale m (0 disables the margin)");
    c.key_flag("--growth-every", "growth_every", "epochs between pseudolabel growth events");
    c.key_flag("--gamma", "gamma", "logit scale");
    c.key_flag("--aug-noise", "aug_noise", "noise std for the augmented view when the dataset has none");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"capforge: concept-aware pseudolabeling over frozen vision-language embeddings"};
    app.require_subcommand(1);
    app.set_version_flag("--version", std::string(cap_version()));

    // synth
    Command synth(app, "synth", "generate a synthetic embedding dataset");
    std::string synth_out;
    synth.app()->add_option("--out", synth_out, "output directory")->required();
    synth.key_flag("--classes", "synth.n_classes", "number of classes");
    synth.key_flag("--per-class", "synth.per_class", "training samples per class");
    synth.key_flag("--test-per-class", "synth.test_per_class", "held-out samples per class");
    synth.key_flag("--dim", "synth.dim", "embedding dimension");
    synth.key_flag("--std", "synth.intra_class_std", "intra-class noise std");
    synth.key_flag("--n-mismatch", "synth.n_mismatch", "classes with a mismatched text feature");
    synth.key_flag("--confusion-pairs", "synth.n_confusion_pairs", "planted confused class pairs");
    synth.key_flag("--confusion-bias", "synth.confusion_bias", "zero-shot skew within a pair, in [0, 1]");
    synth.key_flag("--confusion-cos", "synth.confusion_cos", "cosine between confused centers");
    synth.key_flag("--min-angle", "synth.min_center_angle_deg", "minimum angle between other centers (degrees)");
    synth.key_flag("--synth-aug-noise", "synth.aug_noise_std", "noise std of the stored augmented view");
    synth.key_flag("--description-noise", "synth.description_noise", "noise of candidate descriptions");
    synth.key_flag("--n-descriptions", "synth.n_descriptions", "candidate descriptions per class");
    synth.key_flag("--seen-fraction", "seen_fraction", "seen class fraction for trzsl");
    synth.key_flag("--ssl-per-class", "ssl_per_class", "labeled samples per class for ssl");

    // detect
    Command detect(app, "detect", "find concept-mismatched classes");
    std::string detect_data, detect_out;
    detect.app()->add_option("--data", detect_data, "dataset directory")->required();
    detect.app()->add_option("--out", detect_out, "report file")->required();
    detect.key_flag("--t", "t", "low-prediction threshold t, or 'auto' for ceil(C/10)");

    // pseudolabel
    Command pseudo(app, "pseudolabel", "build the initial pseudolabel set");
    std::string pl_data, pl_report, pl_out;
    pseudo.app()->add_option("--data", pl_data, "dataset directory")->required();
    pseudo.app()->add_option("--report", pl_report, "report from detect")->required();
    pseudo.app()->add_option("--out", pl_out, "pseudolabel file")->required();
    pseudo.key_flag("--k", "k", "pseudolabels per class");
    pseudo.key_flag("--provider", "provider", "description provider: file or mock");
    pseudo.key_flag("--descriptions", "descriptions", "candidate descriptions file (file provider)");
    pseudo.key_flag("--n-descriptions", "n_descriptions", "candidates requested per class");

    // train
    Command train(app, "train", "fine-tune adapters on pseudolabels");
    std::string tr_data, tr_pl, tr_out;
    train.app()->add_option("--data", tr_data, "dataset directory")->required();
    train.app()->add_option("--pl", tr_pl, "pseudolabel file")->required();
    train.app()->add_option("--out", tr_out, "model directory")->required();
    add_train_flags(train);

    // eval
    Command eval(app, "eval", "evaluate a trained model");
    std::string ev_data, ev_model, ev_pl, ev_out;
    eval.app()->add_option("--data", ev_data, "dataset directory")->required();
    eval.app()->add_option("--model", ev_model, "model directory")->required();
    eval.app()->add_option("--pl", ev_pl, "pseudolabel file; adds the margin state to the report");
    eval.app()->add_option("--out", ev_out, "output directory")->required();
    eval.key_flag("--theta-g", "theta_g", "similarity threshold for confused groups");
    eval.key_flag("--ece-bins", "ece_bins", "calibration bins");
    eval.key_flag("--tau", "tau", "confidence threshold used for the margin state");
    eval.key_flag("--margin-scale", "margin_scale", "base margin scale m");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? kExitOk : kExitValidation;
    }

    try {
        ConfigHandle cfg;
        if (synth.app()->parsed()) {
            synth.apply(cfg);
            check(cap_synth_generate(cfg.h, synth_out.c_str()));
            std::cerr << "synth: wrote " << synth_out << "\n";
        } else if (detect.app()->parsed()) {
            detect.apply(cfg);
            DatasetHandle ds(detect_data);
            CString report;
            check(cap_detect(ds.h, cfg.h, &report.p));
            write_file(detect_out, report.str());
            std::cerr << "detect: wrote " << detect_out << "\n";
        } else if (pseudo.app()->parsed()) {
            pseudo.apply(cfg);
            DatasetHandle ds(pl_data);
            const std::string report = read_file(pl_report);
            CString pl;
            check(cap_pseudolabel(ds.h, cfg.h, report.c_str(), &pl.p));
            write_file(pl_out, pl.str());
            std::cerr << "pseudolabel: wrote " << pl_out << "\n";
        } else if (train.app()->parsed()) {
            train.apply(cfg);
            DatasetHandle ds(tr_data);
            const std::string pl = read_file(tr_pl);
            ModelHandle model;
            CString log;
            check(cap_train(ds.h, cfg.h, pl.c_str(), &model.h, &log.p));
            check(cap_model_save(model.h, cfg.h, tr_out.c_str()));
            write_file(std::filesystem::path(tr_out) / "metrics.jsonl", log.str());
            std::cerr << "train: wrote " << tr_out << "\n";
        } else if (eval.app()->parsed()) {
            eval.apply(cfg);
            DatasetHandle ds(ev_data);
            ModelHandle model;
            check(cap_model_load(ev_model.c_str(), &model.h));
            std::optional<std::string> pl;
            if (!ev_pl.empty()) pl = read_file(ev_pl);
            check(cap_eval(model.h, ds.h, cfg.h, pl ? pl->c_str() : nullptr, ev_out.c_str(), nullptr));
            std::cerr << "eval: wrote " << ev_out << "\n";
        }
    } catch (const CliFailure& f) {
        std::cerr << "error: " << f.message << "\n";
        return f.code;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
    return kExitOk;
}
