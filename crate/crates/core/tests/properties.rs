mod common;

use common::check;

macro_rules! property {
    ($name:ident) => {
        #[test]
        fn $name() {
            if let Err(e) = check(stringify!($name), 1000) {
                panic!("{e}");
            }
        }
    };
}

property!(normalization);
property!(closed_form_brightness);
property!(half_saturation);
property!(monotonicity);
property!(triplet_rate_approximation);
property!(inversion_round_trip);
property!(power_bridge_covariance);
property!(enhancement_factorization);
property!(monte_carlo_determinism);
property!(emitted_json_revalidates);

#[test]
fn every_property_is_listed() {
    assert_eq!(common::PROPERTIES.len(), 10);
    assert!(check("no_such_property", 1).is_err());
}
