use admittance_ilc::{preset, preset_names, simulate_iteration, GainSchedule};

/// Semi-implicit Euler on `m Δv̇ + b Δv + k Δx = Δf`, written out by hand.
#[test]
fn gain_form_matches_scalar_euler() {
    for name in preset_names() {
        let p = preset(name).unwrap();
        let r = p.reference(0.05).unwrap();
        let dt = r.dt;
        let g = GainSchedule::from_params(&p.params, r.horizon(), dt).unwrap();
        let rec = simulate_iteration(&g, &p.env, &r, p.initial_state).unwrap();

        let (m, b, k) = (p.params.m, p.params.b, p.params.k);
        let (mut dv, mut dx) = (p.initial_state.dv, p.initial_state.dx);
        for (t, s) in r.samples.iter().enumerate() {
            let x = s.x - dx;
            let df = s.f - p.env.force_at(x);
            let got = rec.states[t];
            let scale = 1.0 + dv.abs().max(dx.abs());
            assert!((got.dv - dv).abs() <= 1e-12 * scale, "{name} t={t}");
            assert!((got.dx - dx).abs() <= 1e-12 * scale, "{name} t={t}");
            assert!((rec.errors[t].f - df).abs() <= 1e-12 * (1.0 + df.abs()));
            dv += dt * (df - b * dv - k * dx) / m;
            dx += dt * dv;
        }
    }
}

#[test]
fn presets_are_consistent_and_stable_without_learning() {
    for name in preset_names() {
        let p = preset(name).unwrap();
        let r = p.reference(0.05).unwrap();
        assert!(r.consistent);
        assert_eq!(r.consistency_gap(&p.env), 0.0);
        let g = GainSchedule::from_params(&p.params, r.horizon(), r.dt).unwrap();
        let rec = simulate_iteration(&g, &p.env, &r, p.initial_state).unwrap();
        assert!(
            rec.e_inf.is_finite() && rec.e_inf < 10.0,
            "{name}: {}",
            rec.e_inf
        );
    }
}
