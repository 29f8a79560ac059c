mod common;

use common::grad::{self, Worst, TOL};
use seqdyn::attention::AttentionKind;
use seqdyn::cells::CellKind;
use seqdyn::model::Arch;

fn ok(label: &str, w: Worst) {
    assert!(w.checked > 0, "{label}: nothing probed");
    assert!(w.err < TOL, "{label}: {} rel err {:.2e}", w.at, w.err);
    println!("{label}: {} entries, worst rel err {:.2e}", w.checked, w.err);
}

#[test]
fn gru_cell_gradients() {
    ok("gru cell", grad::cell(CellKind::Gru));
}

#[test]
fn ugrnn_cell_gradients() {
    ok("ugrnn cell", grad::cell(CellKind::Ugrnn));
}

#[test]
fn lstm_cell_gradients() {
    ok("lstm cell", grad::cell(CellKind::Lstm));
}

#[test]
fn non_gated_cell_gradients() {
    ok("tanh cell", grad::cell(CellKind::NonGatedTanh));
}

#[test]
fn dot_attention_gradients() {
    ok("dot attention", grad::dot_attention());
}

#[test]
fn qkv_attention_gradients() {
    ok("qkv attention", grad::qkv_attention(false));
    ok("scaled qkv attention", grad::qkv_attention(true));
}

#[test]
fn aed_loss_gradients() {
    ok("aed/gru loss", grad::model_loss(Arch::Aed, CellKind::Gru));
    ok("aed/lstm loss", grad::model_loss(Arch::Aed, CellKind::Lstm));
}

#[test]
fn ved_and_ao_loss_gradients() {
    ok("ved/ugrnn loss", grad::model_loss(Arch::Ved, CellKind::Ugrnn));
    ok("ao/gru loss", grad::model_loss(Arch::Ao, CellKind::Gru));
    ok("ao/tanh loss", grad::model_loss(Arch::Ao, CellKind::NonGatedTanh));
}

#[test]
fn qkv_model_loss_gradients() {
    ok("aed/gru qkv loss", grad::model_loss_with(Arch::Aed, CellKind::Gru, Some(AttentionKind::Qkv)));
    ok("ao/gru qkv loss", grad::model_loss_with(Arch::Ao, CellKind::Gru, Some(AttentionKind::Qkv)));
}
