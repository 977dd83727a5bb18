use std::path::Path;
use std::process::{Command, Output};

use slicereg_core::eval::phantom::PhantomSpec;
use slicereg_core::geometry::{invert, rigid_to_matrix, RigidParams, WorldPoint};
use slicereg_core::metrics::percentile;
use slicereg_core::nifti_io::{read_transform_csv, write_transform_csv};
use slicereg_eval::{parse_list, phantom};

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_slicereg-eval"))
        .args(args)
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn small() -> PhantomSpec {
    PhantomSpec {
        n_cases: 2,
        volume_size: [20, 20, 20],
        voxel_mm: 3.0,
        slices_per_case: 3,
        slice_size: (24, 24),
        pixel_mm: 2.0,
        semi_axes_mm: [22.0, 20.0, 18.0],
        seed: 4,
    }
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn make_phantom_command_writes_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin(&[
        "make-phantom", "--out", s(dir.path()), "--cases", "2", "--slices", "2", "--seed", "3",
        "--misalign-std", "2,2,2,1,1,1", "--volume-size", "16", "--voxel-mm", "4", "--slice-size", "16",
        "--pixel-mm", "3",
    ]);
    assert!(stdout(&out).trim().ends_with("config.json"));
    for rel in [
        "config.json",
        "cases/case002/volume.nii.gz",
        "cases/case002/slices/s02.nii.gz",
        "ground_truth/case001/s01_label.nii.gz",
        "ground_truth/case002_transforms.csv",
    ] {
        assert!(dir.path().join(rel).is_file(), "{rel}");
    }
    let rows = read_transform_csv(dir.path().join("ground_truth/case001_transforms.csv")).unwrap();
    assert!(rows.iter().all(|r| r.params.dof() != [0.0; 6]));
}

#[test]
fn eval_labels_identical_dirs() {
    let dir = tempfile::tempdir().unwrap();
    phantom(&small(), [0.0; 6], dir.path()).unwrap();
    let gt = dir.path().join("ground_truth");
    let text = stdout(&bin(&["eval-labels", "--pred-dir", s(&gt), "--gt-dir", s(&gt)]));
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "id,dice,hd95_mm");
    assert_eq!(lines[1], "case001/s01_label,1.000000,0.000000");
    assert_eq!(lines.len(), 1 + 6 + 3);
    assert_eq!(lines[7], "mean,1.000000,0.000000");
    assert_eq!(lines[8], "ci_low,1.000000,0.000000");

    let report = dir.path().join("reports/labels.csv");
    let one = gt.join("case001");
    let o = bin(&[
        "eval-labels", "--pred-dir", s(&one), "--gt-dir", s(&one), "--spacing", "1,1", "--out", s(&report),
    ]);
    assert!(o.status.success());
    assert!(std::fs::read_to_string(&report).unwrap().starts_with("id,dice,hd95_mm\n"));
}

#[test]
fn eval_labels_reports_missing_prediction() {
    let dir = tempfile::tempdir().unwrap();
    phantom(&small(), [0.0; 6], dir.path()).unwrap();
    let empty = tempfile::tempdir().unwrap();
    let gt = dir.path().join("ground_truth");
    let o = bin(&["eval-labels", "--pred-dir", s(empty.path()), "--gt-dir", s(&gt)]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("no prediction"));
}

#[test]
fn misalignment_recovers_perturbation_statistics() {
    let dir = tempfile::tempdir().unwrap();
    let spec = small();
    let std = [3.0, 3.0, 3.0, 2.0, 2.0, 2.0];
    let ds = phantom(&spec, std, dir.path()).unwrap();
    let text = stdout(&bin(&[
        "misalignment",
        s(&ds.cases[0].truth_csv),
        s(&ds.cases[1].truth_csv),
    ]));
    // Inverting the stored truths gives back the perturbations.
    let perturbations: Vec<[f64; 6]> = ds
        .cases
        .iter()
        .flat_map(|c| &c.slices)
        .map(|sl| invert(&rigid_to_matrix(&sl.truth).unwrap()).params().dof())
        .collect();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "parameter,n,min,q1,median,q3,max");
    for (k, line) in lines[1..].iter().enumerate() {
        let cells: Vec<&str> = line.split(',').collect();
        assert_eq!(cells[1], "6");
        let col: Vec<f64> = perturbations.iter().map(|d| d[k]).collect();
        let median: f64 = cells[4].parse().unwrap();
        assert!((median - percentile(&col, 50.0).unwrap()).abs() < 1e-6, "{line}");
    }
}

#[test]
fn inject_noise_command() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("t.csv");
    let c = WorldPoint::new(1.0, 2.0, 3.0);
    let rows: Vec<(String, RigidParams)> = (0..4)
        .map(|k| (format!("s{k}"), RigidParams { tx: k as f64, ..RigidParams::zero_about(c) }))
        .collect();
    write_transform_csv("caseA", &rows, &input).unwrap();
    let same = stdout(&bin(&["inject-noise", "--input", s(&input), "--std", "0,0,0,0,0,0"]));
    assert_eq!(same, std::fs::read_to_string(&input).unwrap());
    let a = stdout(&bin(&["inject-noise", "--input", s(&input), "--std", "1,1,1,1,1,1", "--seed", "5"]));
    let b = stdout(&bin(&["inject-noise", "--input", s(&input), "--std", "1,1,1,1,1,1", "--seed", "5"]));
    assert_eq!(a, b);
    assert_ne!(a, same);
    assert!(!bin(&["inject-noise", "--input", s(&input), "--std", "1,1,1"]).status.success());
    assert!(!bin(&["inject-noise", "--input", s(&input), "--std", "-1,0,0,0,0,0"]).status.success());

    let mixed = dir.path().join("mixed.csv");
    let mut text = std::fs::read_to_string(&input).unwrap();
    text.push_str("caseB,s9,0,0,0,0,0,0,0,0,0\n");
    std::fs::write(&mixed, text).unwrap();
    assert!(!bin(&["inject-noise", "--input", s(&mixed), "--std", "1,1,1,1,1,1"]).status.success());
}

#[test]
fn t1_consistency_command() {
    let dir = tempfile::tempdir().unwrap();
    phantom(&small(), [0.0; 6], dir.path()).unwrap();
    let mut table = String::from("id,slice,label_a,label_b\n");
    for case in ["case001", "case002"] {
        for sl in ["s01", "s02"] {
            let label = format!("ground_truth/{case}/{sl}_label.nii.gz");
            table.push_str(&format!("{case}_{sl},cases/{case}/slices/{sl}.nii.gz,{label},{label}\n"));
        }
    }
    let pairs = dir.path().join("pairs.csv");
    std::fs::write(&pairs, table).unwrap();
    let text = stdout(&bin(&["t1-consistency", "--pairs", s(&pairs)]));
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "id,t1_a,t1_b,difference");
    assert_eq!(lines.len(), 1 + 4 + 3);
    assert!(lines[1].ends_with(",0.000000"));
    assert_eq!(lines[5], "mean_difference,,,0.000000");
}

#[test]
fn list_parsing() {
    assert_eq!(parse_list::<2>("1.5, 2").unwrap(), [1.5, 2.0]);
    assert!(parse_list::<2>("1,2,3").is_err());
    assert!(parse_list::<6>("1,x,3,4,5,6").is_err());
}
