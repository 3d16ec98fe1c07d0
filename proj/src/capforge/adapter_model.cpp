// SPDX-License-Identifier: Apache-2.0
#include "capforge/adapter_model.hpp"

#include "capforge/embedding_store.hpp"
#include "capforge/error.hpp"

#include <nlohmann/json.hpp>

#include <fstream>

namespace capforge {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kWeightFiles[] = {"trunk_img.f32", "trunk_txt.f32", "main_adapter.f32", "pseudo_adapter.f32",
                                        "text_adapter.f32"};

// y = a / |a|; returns dL/da given dL/dy.
Vector normalize_backward(const Vector& y, double norm, const Vector& dy) { return (dy - y * y.dot(dy)) / norm; }

struct VisualCache {
    Vector x, u, out;
    double n0 = 1.0, n1 = 1.0;
};

VisualCache visual_cached(const AdapterModel& m, const Vector& x, Branch branch) {
    VisualCache c;
    c.x = x;
    Vector u0 = x + m.trunk_img * x;
    c.n0 = u0.norm();
    require(c.n0 > 0.0, ErrorKind::Numeric, "visual_forward: degenerate trunk output");
    c.u = u0 / c.n0;
    if (branch == Branch::Inference) {
        c.out = c.u;
        return c;
    }
    const Matrix& w = branch == Branch::Main ? m.main_adapter : m.pseudo_adapter;
    Vector a = c.u + w * c.u;
    c.n1 = a.norm();
    require(c.n1 > 0.0, ErrorKind::Numeric, "visual_forward: degenerate adapter output");
    c.out = a / c.n1;
    return c;
}

struct TextCache {
    Matrix t;    // after trunk + normalize
    Matrix out;  // after adapter + normalize
    Vector n0, n1;
};

TextCache text_cached(const AdapterModel& m, const Matrix& w, bool training) {
    TextCache c;
    const Eigen::Index n = w.rows();
    c.t.resize(n, w.cols());
    c.out.resize(n, w.cols());
    c.n0.resize(n);
    c.n1 = Vector::Ones(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        Vector q = w.row(i).transpose() + m.trunk_txt * w.row(i).transpose();
        c.n0(i) = q.norm();
        require(c.n0(i) > 0.0, ErrorKind::Numeric, "text_forward: degenerate trunk output");
        c.t.row(i) = (q / c.n0(i)).transpose();
        if (!training) {
            c.out.row(i) = c.t.row(i);
            continue;
        }
        Vector r = c.t.row(i).transpose() + m.text_adapter * c.t.row(i).transpose();
        c.n1(i) = r.norm();
        require(c.n1(i) > 0.0, ErrorKind::Numeric, "text_forward: degenerate adapter output");
        c.out.row(i) = (r / c.n1(i)).transpose();
    }
    return c;
}

}  // namespace

AdapterModel AdapterModel::zero_init(std::size_t dim, double gamma) {
    const auto d = static_cast<Eigen::Index>(dim);
    AdapterModel m;
    m.dim = dim;
    m.gamma = gamma;
    m.trunk_img = Matrix::Zero(d, d);
    m.trunk_txt = Matrix::Zero(d, d);
    m.main_adapter = Matrix::Zero(d, d);
    m.pseudo_adapter = Matrix::Zero(d, d);
    m.text_adapter = Matrix::Zero(d, d);
    return m;
}

void AdapterModel::save(const fs::path& dir, const std::string& config_json) const {
    fs::create_directories(dir);
    const Matrix* mats[] = {&trunk_img, &trunk_txt, &main_adapter, &pseudo_adapter, &text_adapter};
    json files = json::object();
    const char* keys[] = {"trunk_img", "trunk_txt", "main_adapter", "pseudo_adapter", "text_adapter"};
    for (int i = 0; i < 5; ++i) {
        write_f32(dir / kWeightFiles[i], mats[i]->cast<float>());
        files[keys[i]] = kWeightFiles[i];
    }
    json manifest = {{"version", 1}, {"dim", dim}, {"gamma", gamma}, {"files", files}, {"config", json::parse(config_json)}};
    std::ofstream out(dir / "model.json", std::ios::trunc);
    require(static_cast<bool>(out), ErrorKind::Runtime, "cannot write model.json in " + dir.string());
    out << manifest.dump(2) << '\n';
}

AdapterModel AdapterModel::load(const fs::path& dir) {
    const fs::path path = dir / "model.json";
    require(fs::exists(path), ErrorKind::MissingFile, "missing file: " + path.string());
    json manifest;
    try {
        std::ifstream in(path);
        manifest = json::parse(in);
    } catch (const json::exception& e) {
        fail(ErrorKind::Format, std::string("model.json: ") + e.what());
    }
    AdapterModel m;
    try {
        m.dim = manifest.at("dim").get<std::size_t>();
        m.gamma = manifest.at("gamma").get<double>();
        const json& files = manifest.at("files");
        auto read = [&](const char* key) {
            return read_f32(dir / files.at(key).get<std::string>(), m.dim, m.dim).cast<double>().eval();
        };
        m.trunk_img = read("trunk_img");
        m.trunk_txt = read("trunk_txt");
        m.main_adapter = read("main_adapter");
        m.pseudo_adapter = read("pseudo_adapter");
        m.text_adapter = read("text_adapter");
    } catch (const json::exception& e) {
        fail(ErrorKind::Format, std::string("model.json: ") + e.what());
    }
    return m;
}

Vector visual_forward(const AdapterModel& m, const Vector& x, Branch branch) { return visual_cached(m, x, branch).out; }

Matrix text_forward(const AdapterModel& m, const Matrix& text_features, bool training) {
    return text_cached(m, text_features, training).out;
}

Vector forward_logits(const AdapterModel& m, const Matrix& text_features, const Vector& x, Branch branch) {
    const Matrix t = text_forward(m, text_features, branch != Branch::Inference);
    return m.gamma * (t * visual_forward(m, x, branch));
}

Matrix batch_logits(const AdapterModel& m, const Matrix& text_out, const Matrix& inputs, Branch branch) {
    Matrix out(inputs.rows(), text_out.rows());
    for (Eigen::Index i = 0; i < inputs.rows(); ++i)
        out.row(i) = (m.gamma * (text_out * visual_forward(m, inputs.row(i).transpose(), branch))).transpose();
    return out;
}

ModelGrads ModelGrads::zeros(std::size_t dim) {
    const auto d = static_cast<Eigen::Index>(dim);
    return {Matrix::Zero(d, d), Matrix::Zero(d, d), Matrix::Zero(d, d), Matrix::Zero(d, d), Matrix::Zero(d, d)};
}

double loss_and_grad(const AdapterModel& m, const Matrix& text_features, const std::vector<LossTerm>& terms,
                     const Matrix& margin, ModelGrads* grads) {
    bool training = false;
    for (const auto& term : terms) training = training || term.branch != Branch::Inference;
    const TextCache tc = text_cached(m, text_features, training);
    Matrix d_text_out = Matrix::Zero(tc.out.rows(), tc.out.cols());

    double total = 0.0;
    for (const auto& term : terms) {
        if (term.inputs == nullptr || term.inputs->rows() == 0) continue;
        require(static_cast<std::size_t>(term.inputs->rows()) == term.labels.size(), ErrorKind::InvalidArgument,
                "loss_and_grad: labels do not match inputs");
        const double scale = 1.0 / static_cast<double>(term.inputs->rows());
        for (Eigen::Index i = 0; i < term.inputs->rows(); ++i) {
            const VisualCache vc = visual_cached(m, term.inputs->row(i).transpose(), term.branch);
            const Vector z = m.gamma * (tc.out * vc.out);
            const LossGrad lg = margin_loss(term.labels[static_cast<std::size_t>(i)], z, margin);
            total += scale * lg.loss;
            if (!grads) continue;

            const Vector dz = scale * lg.grad;
            d_text_out += m.gamma * dz * vc.out.transpose();
            const Vector d_out = m.gamma * (tc.out.transpose() * dz);

            Vector du = d_out;
            if (term.branch != Branch::Inference) {
                const Vector da = normalize_backward(vc.out, vc.n1, d_out);
                const bool main = term.branch == Branch::Main;
                Matrix& gw = main ? grads->main_adapter : grads->pseudo_adapter;
                const Matrix& w = main ? m.main_adapter : m.pseudo_adapter;
                gw += da * vc.u.transpose();
                du = da + w.transpose() * da;
            }
            const Vector du0 = normalize_backward(vc.u, vc.n0, du);
            grads->trunk_img += du0 * vc.x.transpose();
        }
    }

    if (grads) {
        for (Eigen::Index c = 0; c < tc.out.rows(); ++c) {
            Vector dt = d_text_out.row(c).transpose();
            const Vector t = tc.t.row(c).transpose();
            if (training) {
                const Vector dr = normalize_backward(tc.out.row(c).transpose(), tc.n1(c), dt);
                grads->text_adapter += dr * t.transpose();
                dt = dr + m.text_adapter.transpose() * dr;
            }
            const Vector dq = normalize_backward(t, tc.n0(c), dt);
            grads->trunk_txt += dq * text_features.row(c);
        }
    }
    return total;
}

}  // namespace capforge
