#include <bit>
#include <cstring>
#include <fstream>
#include <map>

#include <json.hpp>

#include "mresim/errors.hpp"
#include "mresim/meshfree_model.hpp"

namespace mresim {

namespace {

constexpr char kMagic[] = "MRESIM-MODEL 1\n";

using ArrayMap = std::vector<std::pair<std::string, std::vector<double>>>;

void put_u64(std::ostream& out, std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xffu);
    out.write(reinterpret_cast<const char*>(b), 8);
}

std::uint64_t get_u64(std::istream& in) {
    unsigned char b[8];
    in.read(reinterpret_cast<char*>(b), 8);
    if (!in) throw InputError("truncated model archive");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t{b[i]} << (8 * i);
    return v;
}

template <typename T>
std::vector<double> as_f64(const std::vector<T>& v) {
    return std::vector<double>(v.begin(), v.end());
}

std::vector<double> flatten(const std::vector<Vec3>& v) {
    std::vector<double> out;
    out.reserve(v.size() * 3);
    for (const auto& p : v) out.insert(out.end(), {p[0], p[1], p[2]});
    return out;
}

std::vector<Vec3> unflatten(const std::vector<double>& v) {
    if (v.size() % 3 != 0) throw InputError("model archive vector array has bad length");
    std::vector<Vec3> out(v.size() / 3);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = Vec3(v[3 * i], v[3 * i + 1], v[3 * i + 2]);
    return out;
}

void put_sparse(ArrayMap& arrays, const std::string& name, const SparseMatrix& m) {
    arrays.emplace_back(name + ".outer", std::vector<double>(m.outerIndexPtr(), m.outerIndexPtr() + m.outerSize() + 1));
    arrays.emplace_back(name + ".inner", std::vector<double>(m.innerIndexPtr(), m.innerIndexPtr() + m.nonZeros()));
    arrays.emplace_back(name + ".values", std::vector<double>(m.valuePtr(), m.valuePtr() + m.nonZeros()));
}

SparseMatrix get_sparse(const std::map<std::string, std::vector<double>>& arrays, const std::string& name, int n) {
    const auto& outer = arrays.at(name + ".outer");
    const auto& inner = arrays.at(name + ".inner");
    const auto& values = arrays.at(name + ".values");
    if (outer.size() != static_cast<std::size_t>(n) + 1 || inner.size() != values.size())
        throw InputError("model archive matrix '" + name + "' is inconsistent");
    std::vector<Eigen::Triplet<double>> trip;
    trip.reserve(values.size());
    for (int r = 0; r < n; ++r) {
        for (auto p = static_cast<std::size_t>(outer[r]); p < static_cast<std::size_t>(outer[r + 1]); ++p)
            trip.emplace_back(r, static_cast<int>(inner[p]), values[p]);
    }
    SparseMatrix m(n, n);
    m.setFromTriplets(trip.begin(), trip.end());
    m.makeCompressed();
    return m;
}

}  // namespace

void save_model(const MeshFreeModel& model, const std::filesystem::path& path) {
    ArrayMap arrays;
    arrays.emplace_back("field.young_kpa", model.field.young_kpa);
    arrays.emplace_back("field.mask", as_f64(model.field.mask.flags));
    arrays.emplace_back("dofs.nodes", flatten(model.dofs.nodes));
    arrays.emplace_back("dofs.owner", as_f64(model.dofs.owner));
    arrays.emplace_back("shape.voxels", as_f64(model.shape.voxels));
    arrays.emplace_back("shape.offset", as_f64(model.shape.offset));
    arrays.emplace_back("shape.node", as_f64(model.shape.node));
    arrays.emplace_back("shape.weight", model.shape.weight);
    arrays.emplace_back("shape.grad", flatten(model.shape.grad));
    arrays.emplace_back("mass", std::vector<double>(model.matrices.mass.data(),
                                                    model.matrices.mass.data() + model.matrices.mass.size()));
    put_sparse(arrays, "K", model.matrices.K);
    put_sparse(arrays, "C", model.matrices.C);

    nlohmann::json header;
    header["grid"] = {{"dims", model.field.grid.dims}, {"spacing_mm", model.field.grid.spacing}};
    header["material"] = {{"nu", model.field.nu}, {"density_kg_m3", model.field.density}};
    header["params"] = {{"n_nodes", model.params.n_nodes},   {"support_k", model.params.support_k},
                        {"alpha", model.params.alpha},       {"beta", model.params.beta},
                        {"seed", model.params.seed},         {"max_lloyd_iters", model.params.max_lloyd_iters}};
    header["lloyd"] = {{"iterations", model.dofs.lloyd_iterations}, {"last_movement_mm", model.dofs.last_movement}};
    header["shape_k"] = model.shape.k;
    header["shape_kind"] = to_string(model.shape.kind);
    header["node_count"] = model.node_count();
    nlohmann::json index = nlohmann::json::array();
    for (const auto& [name, data] : arrays) index.push_back({{"name", name}, {"count", data.size()}});
    header["arrays"] = index;

    std::ofstream out(path, std::ios::binary);
    if (!out) throw InputError("cannot write " + path.string());
    const std::string text = header.dump();
    out.write(kMagic, sizeof(kMagic) - 1);
    put_u64(out, text.size());
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& [name, data] : arrays) {
        std::vector<unsigned char> bytes(data.size() * 8);
        for (std::size_t i = 0; i < data.size(); ++i) {
            const auto bits = std::bit_cast<std::uint64_t>(data[i]);
            for (int b = 0; b < 8; ++b) bytes[8 * i + b] = static_cast<unsigned char>((bits >> (8 * b)) & 0xffu);
        }
        out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    }
}

MeshFreeModel load_model(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("cannot open model archive " + path.string());
    char magic[sizeof(kMagic) - 1];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kMagic, sizeof(magic)) != 0) throw InputError(path.string() + " is not a model archive");
    const auto header_len = get_u64(in);
    std::string text(header_len, '\0');
    in.read(text.data(), static_cast<std::streamsize>(header_len));
    if (!in) throw InputError("truncated model archive header");

    nlohmann::json header;
    std::map<std::string, std::vector<double>> arrays;
    MeshFreeModel m;
    try {
        header = nlohmann::json::parse(text);
        for (const auto& entry : header.at("arrays")) {
            const auto count = entry.at("count").get<std::size_t>();
            std::vector<unsigned char> bytes(count * 8);
            in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
            if (!in) throw InputError("truncated model archive data");
            std::vector<double> data(count);
            for (std::size_t i = 0; i < count; ++i) {
                std::uint64_t bits = 0;
                for (int b = 0; b < 8; ++b) bits |= std::uint64_t{bytes[8 * i + b]} << (8 * b);
                data[i] = std::bit_cast<double>(bits);
            }
            arrays.emplace(entry.at("name").get<std::string>(), std::move(data));
        }

        m.field.grid.dims = header.at("grid").at("dims").get<std::array<int, 3>>();
        m.field.grid.spacing = header.at("grid").at("spacing_mm").get<std::array<double, 3>>();
        m.field.nu = header.at("material").at("nu").get<double>();
        m.field.density = header.at("material").at("density_kg_m3").get<double>();
        const auto& p = header.at("params");
        m.params.n_nodes = p.at("n_nodes").get<int>();
        m.params.support_k = p.at("support_k").get<int>();
        m.params.alpha = p.at("alpha").get<double>();
        m.params.beta = p.at("beta").get<double>();
        m.params.seed = p.at("seed").get<std::uint64_t>();
        m.params.max_lloyd_iters = p.at("max_lloyd_iters").get<int>();
        m.dofs.lloyd_iterations = header.at("lloyd").at("iterations").get<int>();
        m.dofs.last_movement = header.at("lloyd").at("last_movement_mm").get<double>();
        m.shape.k = header.at("shape_k").get<int>();
        m.shape.kind = shape_kind_from_string(header.at("shape_kind").get<std::string>());
        m.params.shape = m.shape.kind;

        m.field.young_kpa = arrays.at("field.young_kpa");
        const auto& mask = arrays.at("field.mask");
        m.field.mask.dims = m.field.grid.dims;
        m.field.mask.flags.assign(mask.begin(), mask.end());
        m.dofs.nodes = unflatten(arrays.at("dofs.nodes"));
        const auto& owner = arrays.at("dofs.owner");
        m.dofs.owner.assign(owner.begin(), owner.end());
        const auto& voxels = arrays.at("shape.voxels");
        m.shape.voxels.assign(voxels.begin(), voxels.end());
        const auto& offset = arrays.at("shape.offset");
        m.shape.offset.assign(offset.begin(), offset.end());
        const auto& node = arrays.at("shape.node");
        m.shape.node.assign(node.begin(), node.end());
        m.shape.weight = arrays.at("shape.weight");
        m.shape.grad = unflatten(arrays.at("shape.grad"));
        const auto& mass = arrays.at("mass");
        m.matrices.mass = Eigen::Map<const Vector>(mass.data(), static_cast<Eigen::Index>(mass.size()));
        const int ndof = 3 * static_cast<int>(m.dofs.nodes.size());
        m.matrices.K = get_sparse(arrays, "K", ndof);
        m.matrices.C = get_sparse(arrays, "C", ndof);
    } catch (const nlohmann::json::exception& e) {
        throw InputError("malformed model archive header: " + std::string(e.what()));
    } catch (const std::out_of_range&) {
        throw InputError("model archive is missing an array");
    }
    m.field.validate();
    if (m.matrices.mass.size() != m.dof_count() ||
        m.shape.offset.size() != m.shape.voxels.size() + 1 || m.shape.offset.back() != m.shape.node.size() ||
        m.shape.weight.size() != m.shape.node.size() || m.shape.grad.size() != m.shape.node.size())
        throw InputError("model archive arrays have inconsistent sizes");
    m.rest_q = Vector::Zero(m.dof_count());
    return m;
}

}  // namespace mresim
