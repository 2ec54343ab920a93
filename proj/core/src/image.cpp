#include <jof/image.hpp>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

namespace jof {

ImageRGB ImageRGB::zeros(int w, int h) {
    if (w <= 0 || h <= 0) throw UsageError("image size must be positive");
    ImageRGB img;
    img.width = w;
    img.height = h;
    img.data.assign(static_cast<std::size_t>(3) * w * h, 0.0);
    return img;
}

double& ImageRGB::at(int x, int y, int c) {
    return data[(static_cast<std::size_t>(y) * width + x) * 3 + c];
}
double ImageRGB::at(int x, int y, int c) const {
    return data[(static_cast<std::size_t>(y) * width + x) * 3 + c];
}

ImageGray ImageGray::zeros(int w, int h) {
    if (w <= 0 || h <= 0) throw UsageError("image size must be positive");
    ImageGray img;
    img.width = w;
    img.height = h;
    img.data.assign(static_cast<std::size_t>(w) * h, 0.0);
    return img;
}

double& ImageGray::at(int x, int y) { return data[static_cast<std::size_t>(y) * width + x]; }
double ImageGray::at(int x, int y) const { return data[static_cast<std::size_t>(y) * width + x]; }

namespace {

unsigned char to_byte(double v) {
    const double c = std::clamp(v, 0.0, 1.0);
    return static_cast<unsigned char>(std::lround(c * 255.0));
}

void read_pnm_header(std::ifstream& in, const std::string& path, const char* magic, int& w, int& h,
                     int& maxval) {
    std::string tag;
    in >> tag;
    if (tag != magic) throw IoError("bad magic in " + path + " (expected " + magic + ")");
    auto next_int = [&](int& out) {
        // skip whitespace and # comments
        int c = in.peek();
        while (c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '#') {
            if (c == '#') in.ignore(1 << 20, '\n');
            else in.get();
            c = in.peek();
        }
        if (!(in >> out)) throw IoError("truncated header in " + path);
    };
    next_int(w);
    next_int(h);
    next_int(maxval);
    if (w <= 0 || h <= 0) throw IoError("invalid image size in " + path);
    if (maxval != 255) throw IoError("only 8-bit PNM supported: " + path);
    in.get(); // single whitespace before payload
}

} // namespace

void write_ppm(const std::string& path, const ImageRGB& img) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path);
    out << "P6\n" << img.width << " " << img.height << "\n255\n";
    std::vector<unsigned char> bytes(img.data.size());
    for (std::size_t i = 0; i < img.data.size(); ++i) bytes[i] = to_byte(img.data[i]);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("short write to " + path);
}

ImageRGB read_ppm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    int w, h, maxval;
    read_pnm_header(in, path, "P6", w, h, maxval);
    ImageRGB img = ImageRGB::zeros(w, h);
    std::vector<unsigned char> bytes(img.data.size());
    in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (in.gcount() != static_cast<std::streamsize>(bytes.size()))
        throw IoError("truncated payload in " + path);
    for (std::size_t i = 0; i < bytes.size(); ++i) img.data[i] = bytes[i] / 255.0;
    return img;
}

void write_pgm(const std::string& path, const ImageGray& img) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path);
    out << "P5\n" << img.width << " " << img.height << "\n255\n";
    std::vector<unsigned char> bytes(img.data.size());
    for (std::size_t i = 0; i < img.data.size(); ++i) bytes[i] = to_byte(img.data[i]);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("short write to " + path);
}

ImageGray read_pgm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    int w, h, maxval;
    read_pnm_header(in, path, "P5", w, h, maxval);
    ImageGray img = ImageGray::zeros(w, h);
    std::vector<unsigned char> bytes(img.data.size());
    in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (in.gcount() != static_cast<std::streamsize>(bytes.size()))
        throw IoError("truncated payload in " + path);
    for (std::size_t i = 0; i < bytes.size(); ++i) img.data[i] = bytes[i] / 255.0;
    return img;
}

void write_pfm(const std::string& path, const ImageGray& img) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path);
    out << "Pf\n" << img.width << " " << img.height << "\n-1.0\n";
    // PFM rows run bottom-up
    for (int y = img.height - 1; y >= 0; --y) {
        for (int x = 0; x < img.width; ++x) {
            const float v = static_cast<float>(img.at(x, y));
            out.write(reinterpret_cast<const char*>(&v), sizeof(float));
        }
    }
    if (!out) throw IoError("short write to " + path);
}

ImageGray read_pfm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    std::string tag;
    in >> tag;
    if (tag != "Pf") throw IoError("bad magic in " + path + " (expected Pf)");
    int w, h;
    double scale;
    if (!(in >> w >> h >> scale)) throw IoError("truncated header in " + path);
    if (w <= 0 || h <= 0) throw IoError("invalid image size in " + path);
    if (scale >= 0.0) throw IoError("big-endian PFM not supported: " + path);
    in.get();
    ImageGray img = ImageGray::zeros(w, h);
    for (int y = h - 1; y >= 0; --y) {
        for (int x = 0; x < w; ++x) {
            float v;
            in.read(reinterpret_cast<char*>(&v), sizeof(float));
            if (in.gcount() != sizeof(float)) throw IoError("truncated payload in " + path);
            img.at(x, y) = v;
        }
    }
    return img;
}

double mean_abs_difference(const ImageRGB& a, const ImageRGB& b) {
    if (a.width != b.width || a.height != b.height) throw UsageError("image sizes differ");
    double sum = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i) sum += std::abs(a.data[i] - b.data[i]);
    return sum / static_cast<double>(a.data.size());
}

} // namespace jof
