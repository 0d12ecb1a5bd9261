//! Brute-force verification of the algebra the library is built on, as
//! streamed JSON certificates: the loss decomposition identity, the
//! closed-form variance, the unbiased estimator, the monotone objective
//! chain, and the analytic gradients. Same machinery as `rrd verify all`.

use rrd::core::RngStream;
use rrd::oracle::{
    verify_gradients, verify_loss_decomposition, verify_objective_gap_chain,
    verify_unbiased_rd_estimator,
};

fn main() {
    let instances = 100;
    let mut master = RngStream::new(1);

    let mut certificates = vec![
        verify_loss_decomposition(instances, &mut master.fork()),
        verify_unbiased_rd_estimator(instances, &mut master.fork()),
        verify_objective_gap_chain(instances, &mut master.fork()),
    ];
    certificates.extend(verify_gradients(instances, &mut master.fork()));

    let mut all_passed = true;
    for cert in &certificates {
        println!("{}", cert.to_json_line());
        all_passed &= cert.passed;
    }
    eprintln!(
        "\n{} checks, {}",
        certificates.len(),
        if all_passed {
            "all passed"
        } else {
            "FAILURES PRESENT"
        }
    );
    std::process::exit(if all_passed { 0 } else { 1 });
}
