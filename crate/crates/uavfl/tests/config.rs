use uavfl::config::{Config, ConfigError};
use uavfl::manifest::config_digest;

const EXPLICIT: &str = r#"
seed = 1
[devices]
positions = [[0.0, 0.0], [100.0, 0.0]]
weights = [0.5, 0.5000001]
"#;

fn field_of(err: ConfigError) -> String {
    match err {
        ConfigError::Field { field, .. } => field.to_string(),
        ConfigError::Core(uavfl_core::Error::InvalidParameter { field, .. }) => field.to_string(),
        other => panic!("expected a field error, got {other}"),
    }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

#[test]
fn paper_default_matches_reference_parameters() {
    let s = Config::paper_default().scenario().unwrap();
    assert_eq!(s.num_devices(), 20);
    assert_eq!(s.uav.altitude, 50.0);
    assert!(rel(s.channel.ref_gain, 1e-6) < 1e-12);
    assert!(rel(s.channel.noise_power, 1e-12) < 1e-12);
    assert_eq!(s.channel.tx_power, 0.32);
    assert_eq!(s.uav.max_speed, 50.0);
    assert_eq!(s.uav.slot_duration, 1.0);
    assert_eq!(s.uav.slots, 120);
    assert_eq!(s.uav.coverage_radius, 158.0);
    assert_eq!(s.optimizer.tolerance, 1e-4);
    assert_eq!((s.uav.start.x, s.uav.start.y), (885.0, -10.0));
    for d in s.devices() {
        assert!(d.x.abs() <= 1000.0 && d.y.abs() <= 1000.0);
    }
}

#[test]
fn load_by_name_and_path_agree() {
    let by_name = Config::load("paper_default").unwrap();
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/configs/paper_default.toml");
    assert_eq!(by_name, Config::load(path).unwrap());
}

#[test]
fn near_unit_weights_are_renormalized() {
    let s = Config::from_toml(EXPLICIT).unwrap().scenario().unwrap();
    let sum: f64 = s.weights().iter().sum();
    assert!((sum - 1.0).abs() <= f64::EPSILON);
    assert!(s.weights()[0] < s.weights()[1]);
}

#[test]
fn weights_far_from_unit_sum_are_rejected() {
    let text = EXPLICIT.replace("0.5000001", "0.6");
    assert_eq!(field_of(Config::from_toml(&text).unwrap_err()), "devices.weights");
}

#[test]
fn zero_coverage_radius_is_rejected() {
    let text = format!("{EXPLICIT}\n[uav]\ncoverage_radius = 0.0\n");
    assert_eq!(field_of(Config::from_toml(&text).unwrap_err()), "uav.coverage_radius");
}

#[test]
fn linear_and_log_forms_are_exclusive() {
    let text = format!("{EXPLICIT}\n[channel]\nref_gain = 1e-6\nref_gain_db = -60.0\n");
    assert_eq!(field_of(Config::from_toml(&text).unwrap_err()), "channel.ref_gain");
}

#[test]
fn decibel_keys_convert_on_load() {
    let text = format!("{EXPLICIT}\n[channel]\nref_gain_db = -30.0\nnoise_power_dbm = -60.0\ntx_power_dbm = 30.0\n");
    let ch = Config::from_toml(&text).unwrap().channel_params().unwrap();
    assert!(rel(ch.ref_gain, 1e-3) < 1e-12);
    assert!(rel(ch.noise_power, 1e-9) < 1e-12);
    assert!(rel(ch.tx_power, 1.0) < 1e-12);
}

#[test]
fn unknown_keys_and_bad_values_fail_to_parse() {
    let typo = format!("{EXPLICIT}\n[uav]\naltitud = 50.0\n");
    let err = Config::from_toml(&typo).unwrap_err();
    assert!(matches!(err, ConfigError::Parse(_)));
    assert!(err.to_string().contains("altitud"));

    let bad_loss = format!("{EXPLICIT}\n[learning]\nloss = \"hinge\"\n");
    assert!(matches!(Config::from_toml(&bad_loss).unwrap_err(), ConfigError::Parse(_)));
}

#[test]
fn incomplete_layouts_are_rejected() {
    let text = "[devices]\nclusters = 2\nper_cluster = 3\n";
    assert_eq!(field_of(Config::from_toml(text).unwrap_err()), "devices");
    let mixed = "[devices]\npositions = [[0.0, 0.0]]\nclusters = 2\n";
    assert_eq!(field_of(Config::from_toml(mixed).unwrap_err()), "devices.positions");
}

#[test]
fn unknown_scheme_names_are_rejected() {
    let text = format!("{EXPLICIT}\n[learning]\nschemes = [\"error-free\", \"teleport\"]\n");
    assert_eq!(field_of(Config::from_toml(&text).unwrap_err()), "schemes");
}

#[test]
fn resolved_form_round_trips_with_a_stable_digest() {
    let config = Config::paper_default();
    let text = config.resolved_toml().unwrap();
    let again = Config::from_toml(&text).unwrap();
    assert_eq!(config.resolve().unwrap(), again.resolve().unwrap());
    assert_eq!(text, again.resolved_toml().unwrap());
    assert_eq!(config_digest(&text), config_digest(&again.resolved_toml().unwrap()));

    let mut other = config.clone();
    other.seed += 1;
    assert_ne!(config_digest(&text), config_digest(&other.resolved_toml().unwrap()));
}
