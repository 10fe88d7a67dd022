#include "cttagen/serialize.hpp"

#include <fstream>

namespace cttagen {

json tensor_to_json(const Tensor& t) {
    json j;
    j["v"] = 1;
    j["shape"] = t.shape();
    j["data"] = t.data();
    return j;
}

Tensor tensor_from_json(const json& j, bool requires_grad) {
    if (!j.contains("v") || j.at("v").get<int>() != 1)
        throw IoError("tensor record: unsupported version");
    Shape shape = j.at("shape").get<Shape>();
    std::vector<double> data = j.at("data").get<std::vector<double>>();
    Tensor t = Tensor::from_vector(shape, std::move(data));
    if (requires_grad) t.set_requires_grad(true);
    return t;
}

json load_json_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    json j;
    in >> j;
    return j;
}

void save_json_file(const std::filesystem::path& path, const json& j) {
    if (path.has_parent_path())
        std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    out << j.dump(2) << "\n";
}

}  // namespace cttagen
