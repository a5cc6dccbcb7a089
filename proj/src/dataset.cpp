#include "hft/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

namespace fs = std::filesystem;

namespace hft {

void DatasetSplit::validate() const {
    if (class_count < 1) throw std::runtime_error("dataset has no classes");
    if (!class_names.empty() && static_cast<int>(class_names.size()) != class_count)
        throw std::runtime_error("class_names size does not match class_count");
    for (const auto& im : images) {
        if (im.label < 0 || im.label >= class_count)
            throw std::runtime_error("label out of range for " + im.source_id);
    }
}

namespace {

constexpr const char* kManifestName = "manifest.txt";

DatasetSplit load_packed(const fs::path& dir, const std::string& name, SplitKind kind) {
    std::ifstream mf(dir / kManifestName);
    if (!mf) throw std::runtime_error("cannot open manifest: " + (dir / kManifestName).string());

    int classes = -1, c = 0, h = 0, w = 0;
    std::string blob_name = "images.bin";
    std::vector<std::string> class_names;
    struct Row {
        std::string id;
        std::uint64_t offset;
        int label;
    };
    std::vector<Row> rows;

    std::string line;
    while (std::getline(mf, line)) {
        if (line.empty() || line[0] == '#') continue;
        auto colon = line.find(':');
        if (colon != std::string::npos && line.find(' ') > colon) {  // "key: value" header line
            std::string key = line.substr(0, colon);
            std::string val = line.substr(colon + 1);
            while (!val.empty() && val.front() == ' ') val.erase(val.begin());
            if (key == "classes") classes = std::stoi(val);
            else if (key == "shape") {
                std::istringstream ss(val);
                ss >> c >> h >> w;
            } else if (key == "blob") blob_name = val;
            else if (key == "class_names") {
                std::istringstream ss(val);
                std::string tok;
                while (std::getline(ss, tok, ',')) class_names.push_back(tok);
            } else {
                throw std::runtime_error("manifest has unknown key '" + key + "'");
            }
            continue;
        }
        std::istringstream ss(line);
        Row r;
        if (!(ss >> r.id >> r.offset >> r.label))
            throw std::runtime_error("malformed manifest row: " + line);
        rows.push_back(std::move(r));
    }
    if (classes < 1 || c < 1 || h < 1 || w < 1)
        throw std::runtime_error("manifest missing classes/shape header: " + dir.string());

    std::ifstream blob(dir / blob_name, std::ios::binary);
    if (!blob) throw std::runtime_error("cannot open pixel blob: " + (dir / blob_name).string());

    std::sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) { return a.id < b.id; });

    const std::size_t px = static_cast<std::size_t>(c) * h * w;
    std::vector<unsigned char> buf(px);
    DatasetSplit out;
    out.class_count = classes;
    out.class_names = std::move(class_names);
    out.kind = kind;
    out.dataset_name = name;
    out.images.reserve(rows.size());
    for (const auto& r : rows) {
        blob.clear();
        blob.seekg(static_cast<std::streamoff>(r.offset));
        blob.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(px));
        if (blob.gcount() != static_cast<std::streamsize>(px))
            throw std::runtime_error("corrupt pixel record for " + r.id);
        LabeledImage li;
        li.pixels = Image(c, h, w);
        for (std::size_t i = 0; i < px; ++i) li.pixels.data[i] = buf[i] / 255.f;
        li.label = r.label;
        li.source_id = r.id;
        out.images.push_back(std::move(li));
    }
    out.validate();
    return out;
}

DatasetSplit load_folders(const fs::path& root, const std::string& name, SplitKind kind) {
    std::map<int, fs::path> class_dirs;
    for (const auto& e : fs::directory_iterator(root)) {
        if (!e.is_directory()) continue;
        const std::string stem = e.path().filename().string();
        int idx = -1;
        auto res = std::from_chars(stem.data(), stem.data() + stem.size(), idx);
        if (res.ec != std::errc() || res.ptr != stem.data() + stem.size()) continue;
        class_dirs[idx] = e.path();
    }
    if (class_dirs.empty())
        throw std::runtime_error("not a recognized dataset layout (no manifest, no class folders): " +
                                 root.string());
    int expected = 0;
    for (const auto& [idx, p] : class_dirs) {
        if (idx != expected)
            throw std::runtime_error("class folders must be contiguous 0..C-1, missing " +
                                     std::to_string(expected) + " in " + root.string());
        ++expected;
    }

    DatasetSplit out;
    out.class_count = static_cast<int>(class_dirs.size());
    out.kind = kind;
    out.dataset_name = name;
    for (const auto& [idx, cdir] : class_dirs) {
        std::vector<fs::path> files;
        for (const auto& f : fs::directory_iterator(cdir))
            if (f.is_regular_file()) files.push_back(f.path());
        std::sort(files.begin(), files.end());
        for (const auto& f : files) {
            LabeledImage li;
            li.pixels = read_pnm(f.string());  // throws with the offending path
            li.label = idx;
            li.source_id = name + "/" + std::to_string(idx) + "/" + f.filename().string();
            out.images.push_back(std::move(li));
        }
    }
    if (out.images.empty()) throw std::runtime_error("dataset is empty: " + root.string());
    std::sort(out.images.begin(), out.images.end(),
              [](const LabeledImage& a, const LabeledImage& b) { return a.source_id < b.source_id; });
    out.validate();
    return out;
}

}  // namespace

DatasetSplit load_dataset(const std::string& path, const std::string& name, SplitKind kind) {
    fs::path root(path);
    if (!fs::exists(root)) throw std::runtime_error("dataset path does not exist: " + path);
    if (!fs::is_directory(root)) throw std::runtime_error("dataset path is not a directory: " + path);
    if (fs::exists(root / kManifestName)) return load_packed(root, name, kind);
    return load_folders(root, name, kind);
}

void save_dataset_packed(const DatasetSplit& split, const std::string& dir) {
    split.validate();
    if (split.images.empty()) throw std::invalid_argument("save_dataset_packed: empty split");
    const Image& first = split.images.front().pixels;
    for (const auto& im : split.images)
        if (!im.pixels.same_shape(first))
            throw std::invalid_argument("packed format requires uniform image shape");

    fs::create_directories(dir);
    std::ofstream blob(fs::path(dir) / "images.bin", std::ios::binary);
    std::ofstream mf(fs::path(dir) / kManifestName);
    if (!blob || !mf) throw std::runtime_error("cannot write dataset to " + dir);

    mf << "# packed image dataset, pixels are u8 rows at byte offsets below\n";
    mf << "classes: " << split.class_count << "\n";
    if (!split.class_names.empty()) {
        mf << "class_names: ";
        for (std::size_t i = 0; i < split.class_names.size(); ++i)
            mf << (i ? "," : "") << split.class_names[i];
        mf << "\n";
    }
    mf << "shape: " << first.channels << " " << first.height << " " << first.width << "\n";
    mf << "blob: images.bin\n";

    std::vector<unsigned char> buf(first.size());
    std::uint64_t offset = 0;
    for (const auto& im : split.images) {
        for (std::size_t i = 0; i < buf.size(); ++i) {
            float v = std::clamp(im.pixels.data[i], 0.f, 1.f);
            buf[i] = static_cast<unsigned char>(std::lround(v * 255.f));
        }
        blob.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
        mf << im.source_id << " " << offset << " " << im.label << "\n";
        offset += buf.size();
    }
}

void save_dataset_folders(const DatasetSplit& split, const std::string& dir) {
    split.validate();
    for (const auto& im : split.images) {
        fs::path cdir = fs::path(dir) / std::to_string(im.label);
        fs::create_directories(cdir);
        std::string base = im.source_id;
        std::replace(base.begin(), base.end(), '/', '_');
        write_ppm((cdir / (base + ".ppm")).string(), im.pixels);
    }
}

DatasetSplit select_class(const DatasetSplit& split, int class_id) {
    if (class_id < 0 || class_id >= split.class_count)
        throw std::invalid_argument("select_class: class_id out of range");
    DatasetSplit out = split;
    out.images.clear();
    for (const auto& im : split.images)
        if (im.label == class_id) out.images.push_back(im);
    return out;
}

ClassRemapResult remove_class(const DatasetSplit& split, int class_id) {
    if (class_id < 0 || class_id >= split.class_count)
        throw std::invalid_argument("remove_class: class_id out of range");
    if (split.class_count < 2)
        throw std::invalid_argument("remove_class: need at least 2 classes");

    ClassRemapResult res;
    res.removed_class = class_id;
    res.label_mapping.assign(static_cast<std::size_t>(split.class_count), -1);
    int next = 0;
    for (int old = 0; old < split.class_count; ++old)
        if (old != class_id) res.label_mapping[static_cast<std::size_t>(old)] = next++;

    res.split = split;
    res.split.class_count = split.class_count - 1;
    res.split.images.clear();
    for (const auto& im : split.images) {
        if (im.label == class_id) continue;
        LabeledImage li = im;
        li.label = res.label_mapping[static_cast<std::size_t>(im.label)];
        res.split.images.push_back(std::move(li));
    }
    if (!split.class_names.empty()) {
        res.split.class_names.clear();
        for (int old = 0; old < split.class_count; ++old)
            if (old != class_id) res.split.class_names.push_back(split.class_names[static_cast<std::size_t>(old)]);
    }
    return res;
}

LabeledImage resize_normalize(const LabeledImage& img, int target_h, int target_w) {
    LabeledImage out = img;
    out.pixels = resize_bilinear(img.pixels, target_h, target_w);
    return out;
}

DatasetSplit resize_split(const DatasetSplit& split, int target_h, int target_w) {
    DatasetSplit out = split;
    for (auto& im : out.images) im.pixels = resize_bilinear(im.pixels, target_h, target_w);
    return out;
}

DatasetSplit apply_remap(const DatasetSplit& test, const ClassRemapResult& remap) {
    if (static_cast<int>(remap.label_mapping.size()) != test.class_count)
        throw std::invalid_argument("apply_remap: mapping size does not match class_count");
    DatasetSplit out = test;
    out.class_count = test.class_count - 1;
    out.images.clear();
    for (const auto& im : test.images) {
        int mapped = remap.label_mapping[static_cast<std::size_t>(im.label)];
        if (mapped < 0) continue;
        LabeledImage li = im;
        li.label = mapped;
        out.images.push_back(std::move(li));
    }
    if (!test.class_names.empty()) {
        out.class_names.clear();
        for (int old = 0; old < test.class_count; ++old)
            if (remap.label_mapping[static_cast<std::size_t>(old)] >= 0)
                out.class_names.push_back(test.class_names[static_cast<std::size_t>(old)]);
    }
    return out;
}

}  // namespace hft
