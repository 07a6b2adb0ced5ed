#include "vu/mesh.hpp"

#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>
#include <utility>

#include <Eigen/Geometry>

#include "vu/error.hpp"
#include "vu/io.hpp"

namespace vu {

SurfaceMesh make_grid_mesh(int rows, int cols, const std::function<Eigen::Vector3d(int, int)>& position) {
  if (rows < 2 || cols < 2) throw Error("make_grid_mesh: need at least 2x2 vertices");
  SurfaceMesh mesh;
  mesh.rows = rows;
  mesh.cols = cols;
  mesh.vertices.reserve(static_cast<std::size_t>(rows) * cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) mesh.vertices.push_back(position(r, c));
  mesh.faces.reserve(2 * static_cast<std::size_t>(rows - 1) * (cols - 1));
  for (int r = 0; r + 1 < rows; ++r) {
    for (int c = 0; c + 1 < cols; ++c) {
      const int a = mesh.vertex(r, c), b = mesh.vertex(r, c + 1);
      const int d = mesh.vertex(r + 1, c + 1), e = mesh.vertex(r + 1, c);
      mesh.faces.push_back({a, b, d});
      mesh.faces.push_back({a, d, e});
    }
  }
  return mesh;
}

double triangle_area(const Eigen::Vector3d& a, const Eigen::Vector3d& b, const Eigen::Vector3d& c) {
  return 0.5 * (b - a).cross(c - a).norm();
}

double signed_area_2d(const Eigen::Vector2d& a, const Eigen::Vector2d& b, const Eigen::Vector2d& c) {
  return 0.5 * ((b.x() - a.x()) * (c.y() - a.y()) - (b.y() - a.y()) * (c.x() - a.x()));
}

void validate_mesh(const SurfaceMesh& mesh, double min_area) {
  if (mesh.rows < 2 || mesh.cols < 2) throw Error("mesh: grid must be at least 2x2");
  if (mesh.vertices.size() != static_cast<std::size_t>(mesh.rows) * mesh.cols)
    throw Error("mesh: vertex count does not match rows*cols");
  if (mesh.faces.size() != 2 * static_cast<std::size_t>(mesh.rows - 1) * (mesh.cols - 1))
    throw Error("mesh: face count does not match the strip grid");
  if (!mesh.uv.empty() && mesh.uv.size() != mesh.vertices.size()) throw Error("mesh: uv count mismatch");
  for (std::size_t f = 0; f < mesh.faces.size(); ++f) {
    const auto& t = mesh.faces[f];
    for (int i : t)
      if (i < 0 || static_cast<std::size_t>(i) >= mesh.vertices.size()) throw Error("mesh: face index out of range");
    if (triangle_area(mesh.vertices[t[0]], mesh.vertices[t[1]], mesh.vertices[t[2]]) <= min_area)
      throw Error("mesh: degenerate triangle " + std::to_string(f));
  }
}

int euler_characteristic(const SurfaceMesh& mesh) {
  std::set<std::pair<int, int>> edges;
  for (const auto& t : mesh.faces) {
    for (int i = 0; i < 3; ++i) {
      int a = t[i], b = t[(i + 1) % 3];
      if (a > b) std::swap(a, b);
      edges.emplace(a, b);
    }
  }
  return static_cast<int>(mesh.vertices.size()) - static_cast<int>(edges.size()) + static_cast<int>(mesh.faces.size());
}

std::vector<Eigen::Vector3d> vertex_normals(const SurfaceMesh& mesh) {
  std::vector<Eigen::Vector3d> normals(mesh.vertices.size(), Eigen::Vector3d::Zero());
  for (const auto& t : mesh.faces) {
    // Unnormalized cross product is twice the area times the unit normal.
    const Eigen::Vector3d n =
        (mesh.vertices[t[1]] - mesh.vertices[t[0]]).cross(mesh.vertices[t[2]] - mesh.vertices[t[0]]);
    for (int i : t) normals[i] += n;
  }
  for (auto& n : normals) {
    const double len = n.norm();
    if (len > 0) n /= len;
  }
  return normals;
}

Eigen::Vector3d closest_point_barycentric(const Eigen::Vector3d& p, const Eigen::Vector3d& a,
                                          const Eigen::Vector3d& b, const Eigen::Vector3d& c) {
  // Region classification after Ericson, "Real-Time Collision Detection".
  const Eigen::Vector3d ab = b - a, ac = c - a, ap = p - a;
  const double d1 = ab.dot(ap), d2 = ac.dot(ap);
  if (d1 <= 0 && d2 <= 0) return {1, 0, 0};
  const Eigen::Vector3d bp = p - b;
  const double d3 = ab.dot(bp), d4 = ac.dot(bp);
  if (d3 >= 0 && d4 <= d3) return {0, 1, 0};
  const double vc = d1 * d4 - d3 * d2;
  if (vc <= 0 && d1 >= 0 && d3 <= 0) {
    const double v = d1 / (d1 - d3);
    return {1 - v, v, 0};
  }
  const Eigen::Vector3d cp = p - c;
  const double d5 = ab.dot(cp), d6 = ac.dot(cp);
  if (d6 >= 0 && d5 <= d6) return {0, 0, 1};
  const double vb = d5 * d2 - d1 * d6;
  if (vb <= 0 && d2 >= 0 && d6 <= 0) {
    const double w = d2 / (d2 - d6);
    return {1 - w, 0, w};
  }
  const double va = d3 * d6 - d5 * d4;
  if (va <= 0 && (d4 - d3) >= 0 && (d5 - d6) >= 0) {
    const double w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
    return {0, 1 - w, w};
  }
  const double denom = 1.0 / (va + vb + vc);
  const double v = vb * denom, w = vc * denom;
  return {1 - v - w, v, w};
}

void write_obj(const std::filesystem::path& path, const SurfaceMesh& mesh) {
  std::ostringstream out;
  out << "# grid " << mesh.rows << " " << mesh.cols << "\n";
  char buf[128];
  for (const auto& v : mesh.vertices) {
    std::snprintf(buf, sizeof buf, "v %.17g %.17g %.17g\n", v.x(), v.y(), v.z());
    out << buf;
  }
  const bool uv = mesh.has_uv();
  if (uv) {
    for (const auto& t : mesh.uv) {
      std::snprintf(buf, sizeof buf, "vt %.17g %.17g\n", t.x(), t.y());
      out << buf;
    }
  }
  for (const auto& f : mesh.faces) {
    out << "f";
    for (int i : f) {
      out << " " << i + 1;
      if (uv) out << "/" << i + 1;
    }
    out << "\n";
  }
  io::write_text(path, out.str());
}

SurfaceMesh read_obj(const std::filesystem::path& path) {
  std::istringstream in(io::read_text(path));
  SurfaceMesh mesh;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::istringstream ls(line);
    std::string tag;
    ls >> tag;
    if (tag == "#") {
      std::string word;
      if (ls >> word && word == "grid") ls >> mesh.rows >> mesh.cols;
    } else if (tag == "v") {
      Eigen::Vector3d v;
      if (!(ls >> v.x() >> v.y() >> v.z())) throw FormatError(path.string() + ":" + std::to_string(lineno) + ": bad v");
      mesh.vertices.push_back(v);
    } else if (tag == "vt") {
      Eigen::Vector2d t;
      if (!(ls >> t.x() >> t.y())) throw FormatError(path.string() + ":" + std::to_string(lineno) + ": bad vt");
      mesh.uv.push_back(t);
    } else if (tag == "f") {
      std::array<int, 3> f{};
      for (int& idx : f) {
        std::string tok;
        if (!(ls >> tok)) throw FormatError(path.string() + ":" + std::to_string(lineno) + ": bad f");
        idx = std::stoi(tok.substr(0, tok.find('/'))) - 1;
      }
      mesh.faces.push_back(f);
    }
  }
  if (mesh.rows * mesh.cols != static_cast<int>(mesh.vertices.size()))
    throw FormatError(path.string() + ": missing or inconsistent '# grid rows cols' header");
  if (!mesh.uv.empty() && mesh.uv.size() != mesh.vertices.size())
    throw FormatError(path.string() + ": vt count does not match v count");
  return mesh;
}

}  // namespace vu
