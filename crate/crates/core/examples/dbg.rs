use repeater_sim::ensembles::RetrievalParams;
use repeater_sim::linear_optics::*;
use repeater_sim::oracle;
use repeater_sim::stations::*;

fn main() {
    let ab = canonical_link_state(Site::A, Site::B, 4).unwrap();
    let cd = canonical_link_state(Site::C, Site::D, 4).unwrap();
    let joint = BranchEnsemble::from_pure(ab.tensor(&cd).unwrap().normalized());
    let outcomes = bsm2(
        &joint, Site::B, Site::C, 0.9,
        &RetrievalParams::new(0.98).unwrap(),
        &DetectorModel::threshold(0.99).unwrap(),
    ).unwrap();
    let accepted: Vec<&DetectionOutcome> = outcomes.iter().filter(|o| o.accepted).collect();
    let basis = oracle::Basis::new(accepted[0].post_state.modes(), 4).unwrap();
    let mut rhos = Vec::new();
    for o in &accepted {
        let pair = o.clicked_pair().unwrap();
        println!("pattern {:?} prob {:.6e}", pair, o.probability);
        let corrected = apply_correction(
            &o.post_state,
            &pattern_correction(StationKind::Swapping, pair, Site::A, Site::D),
        ).unwrap();
        let p = classify(&corrected, Site::A, Site::D).unwrap();
        println!("  p2={:.9} p1={:.9} p0={:.9} ph={:.9} F={:.9}", p.p2, p.p1, p.p0, p.ph, p.fidelity);
        let sw = single_excitation_weights(&corrected, Site::A, Site::D).unwrap();
        println!("  singles: {:?}", sw);
        rhos.push(basis.density_matrix(&corrected).unwrap());
    }
    for (i, r) in rhos.iter().enumerate().skip(1) {
        let d = oracle::max_diff(r, &rhos[0]);
        println!("maxdiff rho[{}] vs rho[0] = {:.3e}", i, d);
        if d > 1e-10 {
            for a in 0..r.nrows() {
                for b in 0..r.ncols() {
                    let diff = (r[(a,b)] - rhos[0][(a,b)]).norm();
                    if diff > 1e-10 {
                        println!("  [{:?} x {:?}] {:?} vs {:?}", basis.states()[a], basis.states()[b], r[(a,b)], rhos[0][(a,b)]);
                    }
                }
            }
        }
    }
    println!("modes: {:?}", accepted[0].post_state.modes().iter().map(|m| m.to_string()).collect::<Vec<_>>());
}
