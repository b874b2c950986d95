//! Accuracy metrics against annotated attachment sites: per-landmark
//! closest-point errors, aggregated into the 11-row report layout
//! (Overall; Cervical, Thoracic, Lumbar; ALL, PLL, CL, ISL, LF, ITL,
//! SSL), with MAE, SD, error range, and RMSE in millimeters.

use nalgebra::Point3;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SldError};
use crate::landmarks::{serde_points, LandmarkSet, LigamentKind, Site};
use crate::mesh::closest::point_triangle_distance;
use crate::mesh::TriMesh;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SpineRegion {
    Cervical,
    Thoracic,
    Lumbar,
}

impl SpineRegion {
    pub const ALL: [SpineRegion; 3] = [
        SpineRegion::Cervical,
        SpineRegion::Thoracic,
        SpineRegion::Lumbar,
    ];
}

impl std::str::FromStr for SpineRegion {
    type Err = SldError;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cervical" => Ok(SpineRegion::Cervical),
            "thoracic" => Ok(SpineRegion::Thoracic),
            "lumbar" => Ok(SpineRegion::Lumbar),
            other => Err(SldError::Config(format!("unknown spine region {other:?}"))),
        }
    }
}

/// One annotated attachment site: either a point list, a surface patch
/// (vertex set on the mesh), or both.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationGroup {
    pub kind: LigamentKind,
    pub site: Site,
    #[serde(with = "serde_points", default, skip_serializing_if = "Vec::is_empty")]
    pub points: Vec<Point3<f64>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub patch_vertices: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationSet {
    pub mesh_id: String,
    pub groups: Vec<AnnotationGroup>,
}

impl AnnotationSet {
    pub fn group(&self, kind: LigamentKind, site: Site) -> Option<&AnnotationGroup> {
        self.groups
            .iter()
            .find(|g| g.kind == kind && g.site == site)
    }

    pub fn validate(&self, mesh: &TriMesh) -> Result<()> {
        for g in &self.groups {
            if g.points.is_empty() && g.patch_vertices.is_empty() {
                return Err(SldError::Validation(format!(
                    "annotation group {:?} {:?} is empty",
                    g.kind, g.site
                )));
            }
            if let Some(&v) = g.patch_vertices.iter().find(|&&v| v >= mesh.vertices.len()) {
                return Err(SldError::Validation(format!(
                    "annotation group {:?} {:?} references vertex {v} beyond mesh size {}",
                    g.kind,
                    g.site,
                    mesh.vertices.len()
                )));
            }
        }
        Ok(())
    }
}

/// Distance from a detected landmark to the annotated site: min pairwise
/// distance for point annotations; min point-to-triangle distance over
/// patch faces (all three corners inside the patch) for surface patches.
/// A patch without any interior face degrades to its vertex distances.
pub fn closest_point_error(
    y: &Point3<f64>,
    annotation: &AnnotationGroup,
    mesh: &TriMesh,
) -> Result<f64> {
    let mut best = f64::INFINITY;
    if !annotation.patch_vertices.is_empty() {
        let mut in_patch = vec![false; mesh.vertices.len()];
        for &v in &annotation.patch_vertices {
            if v >= mesh.vertices.len() {
                return Err(SldError::Validation(format!(
                    "patch vertex {v} out of range"
                )));
            }
            in_patch[v] = true;
        }
        let mut any_face = false;
        for f in &mesh.faces {
            if f.iter().all(|&v| in_patch[v]) {
                any_face = true;
                let d = point_triangle_distance(
                    y,
                    &mesh.vertices[f[0]],
                    &mesh.vertices[f[1]],
                    &mesh.vertices[f[2]],
                );
                best = best.min(d);
            }
        }
        if !any_face {
            for &v in &annotation.patch_vertices {
                best = best.min((y - mesh.vertices[v]).norm());
            }
        }
    }
    for p in &annotation.points {
        best = best.min((y - p).norm());
    }
    if best.is_finite() {
        Ok(best)
    } else {
        Err(SldError::Validation(format!(
            "annotation group {:?} {:?} is empty",
            annotation.kind, annotation.site
        )))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SdMode {
    Population,
    Sample,
}

impl std::str::FromStr for SdMode {
    type Err = SldError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "population" => Ok(SdMode::Population),
            "sample" => Ok(SdMode::Sample),
            other => Err(SldError::Config(format!("unknown sd mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Category {
    Overall,
    Region(SpineRegion),
    Kind(LigamentKind),
}

impl Category {
    /// Table row order: Overall; the three regions; the seven kinds.
    pub const ORDER: [Category; 11] = [
        Category::Overall,
        Category::Region(SpineRegion::Cervical),
        Category::Region(SpineRegion::Thoracic),
        Category::Region(SpineRegion::Lumbar),
        Category::Kind(LigamentKind::All),
        Category::Kind(LigamentKind::Pll),
        Category::Kind(LigamentKind::Cl),
        Category::Kind(LigamentKind::Isl),
        Category::Kind(LigamentKind::Lf),
        Category::Kind(LigamentKind::Itl),
        Category::Kind(LigamentKind::Ssl),
    ];

    pub fn label(&self) -> &'static str {
        match self {
            Category::Overall => "Overall",
            Category::Region(SpineRegion::Cervical) => "Cervical",
            Category::Region(SpineRegion::Thoracic) => "Thoracic",
            Category::Region(SpineRegion::Lumbar) => "Lumbar",
            Category::Kind(LigamentKind::All) => "ALL",
            Category::Kind(LigamentKind::Pll) => "PLL",
            Category::Kind(LigamentKind::Cl) => "CL",
            Category::Kind(LigamentKind::Isl) => "ISL",
            Category::Kind(LigamentKind::Lf) => "LF",
            Category::Kind(LigamentKind::Itl) => "ITL",
            Category::Kind(LigamentKind::Ssl) => "SSL",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub category: Category,
    pub n: usize,
    pub mae_mm: f64,
    pub sd_mm: f64,
    pub min_mm: f64,
    pub max_mm: f64,
    pub rmse_mm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub sd_mode: SdMode,
    /// All eleven rows in table order; categories with no matched
    /// landmarks carry n = 0 and zeroed statistics.
    pub rows: Vec<EvalRow>,
}

impl EvalReport {
    pub fn row(&self, category: Category) -> Option<&EvalRow> {
        self.rows.iter().find(|r| r.category == category)
    }
}

fn make_row(category: Category, errors: &[f64], sd_mode: SdMode) -> EvalRow {
    let n = errors.len();
    let mae = errors.iter().sum::<f64>() / n as f64;
    let var_num: f64 = errors.iter().map(|e| (e - mae) * (e - mae)).sum();
    let sd = match sd_mode {
        SdMode::Population => (var_num / n as f64).sqrt(),
        SdMode::Sample => {
            if n > 1 {
                (var_num / (n - 1) as f64).sqrt()
            } else {
                0.0
            }
        }
    };
    let rmse = (errors.iter().map(|e| e * e).sum::<f64>() / n as f64).sqrt();
    EvalRow {
        category,
        n,
        mae_mm: mae,
        sd_mm: sd,
        min_mm: errors.iter().copied().fold(f64::INFINITY, f64::min),
        max_mm: errors.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        rmse_mm: rmse,
    }
}

pub struct EvalInput<'a> {
    pub mesh: &'a TriMesh,
    pub landmarks: &'a LandmarkSet,
    pub region: SpineRegion,
}

/// Per-landmark errors aggregated into the fixed category rows. Detected
/// groups without a matching annotation group are skipped with a warning,
/// or rejected when `strict` is set.
pub fn compute_metrics(
    detected: &[EvalInput<'_>],
    annotations: &[AnnotationSet],
    sd_mode: SdMode,
    strict: bool,
) -> Result<(EvalReport, Vec<String>)> {
    let mut warnings = Vec::new();
    let mut by_category: std::collections::BTreeMap<&'static str, Vec<f64>> = Default::default();
    let push =
        |cat: Category, e: f64, map: &mut std::collections::BTreeMap<&'static str, Vec<f64>>| {
            map.entry(cat.label()).or_default().push(e);
        };

    for input in detected {
        let annotation = annotations
            .iter()
            .find(|a| a.mesh_id == input.landmarks.mesh_id);
        let annotation = match annotation {
            Some(a) => a,
            None => {
                let msg = format!("no annotation set for mesh {:?}", input.landmarks.mesh_id);
                if strict {
                    return Err(SldError::Validation(msg));
                }
                warnings.push(msg);
                continue;
            }
        };
        for group in &input.landmarks.groups {
            let truth = match annotation.group(group.kind, group.site) {
                Some(t) => t,
                None => {
                    let msg = format!(
                        "mesh {:?}: no annotation for {:?} {:?}; group excluded",
                        input.landmarks.mesh_id, group.kind, group.site
                    );
                    if strict {
                        return Err(SldError::Validation(msg));
                    }
                    warnings.push(msg);
                    continue;
                }
            };
            for y in &group.points {
                let e = closest_point_error(y, truth, input.mesh)?;
                push(Category::Overall, e, &mut by_category);
                push(Category::Region(input.region), e, &mut by_category);
                push(Category::Kind(group.kind), e, &mut by_category);
            }
        }
    }

    if by_category
        .get(Category::Overall.label())
        .is_none_or(Vec::is_empty)
    {
        return Err(SldError::Validation(
            "no landmarks matched any annotation".into(),
        ));
    }
    let rows = Category::ORDER
        .iter()
        .map(|&cat| match by_category.get(cat.label()) {
            Some(errors) if !errors.is_empty() => make_row(cat, errors, sd_mode),
            _ => EvalRow {
                category: cat,
                n: 0,
                mae_mm: 0.0,
                sd_mm: 0.0,
                min_mm: 0.0,
                max_mm: 0.0,
                rmse_mm: 0.0,
            },
        })
        .collect();
    Ok((EvalReport { sd_mode, rows }, warnings))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Markdown,
}

/// CSV keeps full precision; markdown rounds to one decimal, mirroring
/// the published table layout.
pub fn render_report(report: &EvalReport, format: ReportFormat) -> String {
    let mut out = String::new();
    match format {
        ReportFormat::Csv => {
            out.push_str("category,n,mae_mm,sd_mm,min_mm,max_mm,rmse_mm\n");
            for r in &report.rows {
                out.push_str(&format!(
                    "{},{},{},{},{},{},{}\n",
                    r.category.label(),
                    r.n,
                    r.mae_mm,
                    r.sd_mm,
                    r.min_mm,
                    r.max_mm,
                    r.rmse_mm
                ));
            }
        }
        ReportFormat::Markdown => {
            out.push_str("| Category | n | MAE \u{b1} SD (mm) | Error range (mm) | RMSE (mm) |\n");
            out.push_str("|---|---|---|---|---|\n");
            for r in &report.rows {
                out.push_str(&format!(
                    "| {} | {} | {:.1} \u{b1} {:.1} | {:.1} - {:.1} | {:.1} |\n",
                    r.category.label(),
                    r.n,
                    r.mae_mm,
                    r.sd_mm,
                    r.min_mm,
                    r.max_mm,
                    r.rmse_mm
                ));
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::landmarks::LandmarkGroup;
    use nalgebra::point;
    use rand::{Rng, SeedableRng};

    fn point_annotation(points: Vec<Point3<f64>>) -> AnnotationGroup {
        AnnotationGroup {
            kind: LigamentKind::All,
            site: Site::Superior,
            points,
            patch_vertices: Vec::new(),
        }
    }

    fn dummy_mesh() -> TriMesh {
        crate::synth::make_primitive_box(1.0, 1.0, 1.0).unwrap()
    }

    #[test]
    fn error_zero_on_annotated_point() {
        let m = dummy_mesh();
        let a = point_annotation(vec![point![1.0, 2.0, 3.0]]);
        let e = closest_point_error(&point![1.0, 2.0, 3.0], &a, &m).unwrap();
        assert_eq!(e, 0.0);
    }

    #[test]
    fn patch_projection_distance() {
        // unit square in z = 0 containing the origin
        let m = TriMesh::new(
            vec![
                point![-0.5, -0.5, 0.0],
                point![0.5, -0.5, 0.0],
                point![0.5, 0.5, 0.0],
                point![-0.5, 0.5, 0.0],
            ],
            vec![[0, 1, 2], [0, 2, 3]],
        )
        .unwrap();
        let a = AnnotationGroup {
            kind: LigamentKind::All,
            site: Site::Superior,
            points: Vec::new(),
            patch_vertices: vec![0, 1, 2, 3],
        };
        let e = closest_point_error(&point![0.0, 0.0, 1.0], &a, &m).unwrap();
        assert!((e - 1.0).abs() < 1e-12);
    }

    #[test]
    fn matches_brute_force_over_point_list() {
        let m = dummy_mesh();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let points: Vec<Point3<f64>> = (0..50)
            .map(|_| {
                point![
                    rng.gen_range(-5.0..5.0),
                    rng.gen_range(-5.0..5.0),
                    rng.gen_range(-5.0..5.0)
                ]
            })
            .collect();
        let a = point_annotation(points.clone());
        for _ in 0..20 {
            let y = point![
                rng.gen_range(-5.0..5.0),
                rng.gen_range(-5.0..5.0),
                rng.gen_range(-5.0..5.0)
            ];
            let brute = points
                .iter()
                .map(|p| (y - p).norm())
                .fold(f64::INFINITY, f64::min);
            assert_eq!(closest_point_error(&y, &a, &m).unwrap(), brute);
        }
    }

    #[test]
    fn translation_invariance() {
        let m = dummy_mesh();
        let shift = Vector3::new(3.0, -7.0, 11.0);
        let points = vec![point![1.0, 0.0, 0.0], point![0.0, 2.0, 0.0]];
        let shifted: Vec<Point3<f64>> = points.iter().map(|p| p + shift).collect();
        let y = point![0.3, 0.4, 0.5];
        let e0 = closest_point_error(&y, &point_annotation(points), &m).unwrap();
        let e1 = closest_point_error(&(y + shift), &point_annotation(shifted), &m).unwrap();
        assert!((e0 - e1).abs() < 1e-12);
    }

    #[test]
    fn empty_annotation_rejected() {
        let m = dummy_mesh();
        let a = point_annotation(Vec::new());
        assert!(closest_point_error(&point![0.0, 0.0, 0.0], &a, &m).is_err());
    }

    use nalgebra::Vector3;

    fn single_mesh_report(errors_along_x: &[f64], sd_mode: SdMode) -> EvalReport {
        // one annotated point at the origin; detected points offset along x
        let m = dummy_mesh();
        let landmarks = LandmarkSet {
            mesh_id: "t".into(),
            config: Default::default(),
            groups: vec![LandmarkGroup {
                kind: LigamentKind::All,
                site: Site::Superior,
                points: errors_along_x
                    .iter()
                    .map(|&e| point![e, 0.0, 0.0])
                    .collect(),
            }],
        };
        let annotations = vec![AnnotationSet {
            mesh_id: "t".into(),
            groups: vec![point_annotation(vec![point![0.0, 0.0, 0.0]])],
        }];
        let inputs = [EvalInput {
            mesh: &m,
            landmarks: &landmarks,
            region: SpineRegion::Lumbar,
        }];
        compute_metrics(&inputs, &annotations, sd_mode, false)
            .unwrap()
            .0
    }

    #[test]
    fn closed_form_row() {
        let report = single_mesh_report(&[0.0, 3.0, 4.0], SdMode::Population);
        let row = report.row(Category::Overall).unwrap();
        assert!((row.mae_mm - 7.0 / 3.0).abs() < 1e-3);
        assert!((row.sd_mm - 1.6997).abs() < 1e-3);
        assert_eq!(row.min_mm, 0.0);
        assert_eq!(row.max_mm, 4.0);
        assert!((row.rmse_mm - 2.8868).abs() < 1e-3);
        assert!(row.mae_mm <= row.rmse_mm);
    }

    #[test]
    fn single_landmark_row() {
        let report = single_mesh_report(&[1.5], SdMode::Population);
        let row = report.row(Category::Overall).unwrap();
        assert_eq!(row.n, 1);
        assert_eq!(row.mae_mm, 1.5);
        assert_eq!(row.rmse_mm, 1.5);
        assert_eq!(row.sd_mm, 0.0);
        assert_eq!(row.min_mm, 1.5);
        assert_eq!(row.max_mm, 1.5);
    }

    #[test]
    fn perfect_detection_zero_row() {
        let report = single_mesh_report(&[0.0, 0.0], SdMode::Sample);
        let row = report.row(Category::Kind(LigamentKind::All)).unwrap();
        assert_eq!(row.mae_mm, 0.0);
        assert_eq!(row.rmse_mm, 0.0);
    }

    #[test]
    fn mae_never_exceeds_rmse() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let n = rng.gen_range(1..40);
            let errors: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..10.0)).collect();
            let row = make_row(Category::Overall, &errors, SdMode::Population);
            assert!(row.mae_mm <= row.rmse_mm + 1e-12);
            assert!(row.min_mm <= row.mae_mm && row.mae_mm <= row.max_mm);
        }
    }

    #[test]
    fn unmatched_group_warns_or_errors() {
        let m = dummy_mesh();
        let landmarks = LandmarkSet {
            mesh_id: "t".into(),
            config: Default::default(),
            groups: vec![
                LandmarkGroup {
                    kind: LigamentKind::All,
                    site: Site::Superior,
                    points: vec![point![0.0, 0.0, 0.0]],
                },
                LandmarkGroup {
                    kind: LigamentKind::Ssl,
                    site: Site::None,
                    points: vec![point![1.0, 0.0, 0.0]],
                },
            ],
        };
        let annotations = vec![AnnotationSet {
            mesh_id: "t".into(),
            groups: vec![point_annotation(vec![point![0.0, 0.0, 0.0]])],
        }];
        let inputs = [EvalInput {
            mesh: &m,
            landmarks: &landmarks,
            region: SpineRegion::Cervical,
        }];
        let (report, warnings) =
            compute_metrics(&inputs, &annotations, SdMode::Population, false).unwrap();
        assert_eq!(warnings.len(), 1);
        let excluded = report.row(Category::Kind(LigamentKind::Ssl)).unwrap();
        assert_eq!(excluded.n, 0);
        assert!(compute_metrics(&inputs, &annotations, SdMode::Population, true).is_err());
    }

    #[test]
    fn report_rendering_layout() {
        // one synthetic row per category
        let rows: Vec<EvalRow> = Category::ORDER
            .iter()
            .map(|&c| make_row(c, &[1.0, 2.0], SdMode::Population))
            .collect();
        let report = EvalReport {
            sd_mode: SdMode::Population,
            rows,
        };
        let csv = render_report(&report, ReportFormat::Csv);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 12);
        assert!(lines[0].starts_with("category,"));
        assert!(lines[1].starts_with("Overall,"));
        assert!(lines[4].starts_with("Lumbar,"));
        assert!(lines[11].starts_with("SSL,"));
        // full-precision round trip
        let fields: Vec<&str> = lines[1].split(',').collect();
        assert_eq!(fields[2].parse::<f64>().unwrap(), 1.5);

        let md = render_report(&report, ReportFormat::Markdown);
        assert_eq!(md.lines().count(), 13);
        assert!(md.contains("| Overall | 2 | 1.5 \u{b1} 0.5 |"));
    }
}
