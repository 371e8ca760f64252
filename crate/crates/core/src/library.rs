//! Built-in contract kinds: token, counter, inbox, forwarder and always-fail.
//! Every kind also gets a `noop` method.

use std::collections::BTreeSet;

use crate::chain::{CallCtx, CallResult, Contract, ContractState, MethodBody, MethodDef, MethodFailure};
use crate::types::{Address, Value};

pub const KINDS: &[&str] = &["token", "counter", "inbox", "forwarder", "failing"];

fn def(name: &str, body: MethodBody, scope: &[Address]) -> MethodDef {
    MethodDef {
        name: name.to_string(),
        body,
        scope: scope.iter().cloned().collect::<BTreeSet<_>>(),
    }
}

fn text_param(params: &[Value], i: usize) -> Result<&str, MethodFailure> {
    params.get(i).and_then(Value::as_str).ok_or(MethodFailure::BadParams)
}

fn int_param(params: &[Value], i: usize) -> Result<i64, MethodFailure> {
    params.get(i).and_then(Value::as_int).ok_or(MethodFailure::BadParams)
}

pub fn balance_var(account: &str) -> String {
    format!("bal.{account}")
}

fn noop(_: &mut CallCtx<'_>, _: &[Value]) -> CallResult {
    Ok(Value::Bool(true))
}

/// transfer(from, to, amount)
fn token_transfer(ctx: &mut CallCtx<'_>, params: &[Value]) -> CallResult {
    let from = balance_var(text_param(params, 0)?);
    let to = balance_var(text_param(params, 1)?);
    let amount = int_param(params, 2)?;
    if amount < 0 {
        return Err(MethodFailure::BadParams);
    }
    let have = ctx.get_int(&from).map_err(|_| MethodFailure::BadParams)?;
    let dst = ctx.get_int(&to).map_err(|_| MethodFailure::BadParams)?;
    if have < amount {
        return Err(MethodFailure::InsufficientFunds);
    }
    if from != to {
        ctx.set(&from, Value::Int(have - amount))?;
        ctx.set(&to, Value::Int(dst + amount))?;
    }
    Ok(Value::Int(have - amount))
}

/// mint(to, amount), owner only
fn token_mint(ctx: &mut CallCtx<'_>, params: &[Value]) -> CallResult {
    if ctx.caller() != ctx.owner() {
        return Err(MethodFailure::NotOwner);
    }
    let to = balance_var(text_param(params, 0)?);
    let amount = int_param(params, 1)?;
    if amount < 0 {
        return Err(MethodFailure::BadParams);
    }
    let dst = ctx.get_int(&to).map_err(|_| MethodFailure::BadParams)?;
    ctx.set(&to, Value::Int(dst + amount))?;
    Ok(Value::Int(dst + amount))
}

fn token_balance(ctx: &mut CallCtx<'_>, params: &[Value]) -> CallResult {
    let acct = balance_var(text_param(params, 0)?);
    ctx.get(&acct).cloned().map_err(|_| MethodFailure::BadParams)
}

pub fn token(addr: &Address, owner: &Address, balances: &[(&str, i64)]) -> Contract {
    let mut st = ContractState::new();
    for (acct, amt) in balances {
        st = st.with(balance_var(acct), Value::Int(*amt));
    }
    Contract::new(addr.clone(), "token", owner.clone())
        .with_state(st)
        .with_method(def("transfer", token_transfer, &[]))
        .with_method(def("mint", token_mint, &[]))
        .with_method(def("balance_of", token_balance, &[]))
        .with_method(def("noop", noop, &[]))
}

fn counter_increment(ctx: &mut CallCtx<'_>, _: &[Value]) -> CallResult {
    let n = ctx.get_int("count")? + 1;
    ctx.set("count", Value::Int(n))?;
    Ok(Value::Int(n))
}

fn counter_get(ctx: &mut CallCtx<'_>, _: &[Value]) -> CallResult {
    ctx.get("count").cloned()
}

pub fn counter(addr: &Address, owner: &Address, start: i64) -> Contract {
    Contract::new(addr.clone(), "counter", owner.clone())
        .with_state(ContractState::new().with("count", Value::Int(start)))
        .with_method(def("increment", counter_increment, &[]))
        .with_method(def("get", counter_get, &[]))
        .with_method(def("noop", noop, &[]))
}

/// notification(origin, origin_chain, data): counts deliveries and keeps the
/// last payload.
fn inbox_notification(ctx: &mut CallCtx<'_>, params: &[Value]) -> CallResult {
    let data = params.get(2).cloned().ok_or(MethodFailure::BadParams)?;
    let n = ctx.get_int("count")? + 1;
    ctx.set("count", Value::Int(n))?;
    ctx.set("last", data)?;
    Ok(Value::Int(n))
}

pub fn inbox(addr: &Address, owner: &Address) -> Contract {
    Contract::new(addr.clone(), "inbox", owner.clone())
        .with_state(
            ContractState::new()
                .with("count", Value::Int(0))
                .with("last", Value::Bytes(vec![])),
        )
        .with_method(def("notification", inbox_notification, &[]))
        .with_method(def("noop", noop, &[]))
}

/// forward(token, from, to, amount): an indirect transfer through another
/// contract, with the original caller relayed.
fn forwarder_forward(ctx: &mut CallCtx<'_>, params: &[Value]) -> CallResult {
    let token = params
        .first()
        .and_then(Address::from_value)
        .ok_or(MethodFailure::BadParams)?;
    let n = ctx.get_int("forwarded")? + 1;
    ctx.set("forwarded", Value::Int(n))?;
    ctx.call(&token, "transfer", &params[1..])
}

/// `reach` lists the contracts the forwarder may touch indirectly.
pub fn forwarder(addr: &Address, owner: &Address, reach: &[Address]) -> Contract {
    Contract::new(addr.clone(), "forwarder", owner.clone())
        .with_state(ContractState::new().with("forwarded", Value::Int(0)))
        .with_method(def("forward", forwarder_forward, reach))
        .with_method(def("noop", noop, &[]))
}

fn always_fail(_: &mut CallCtx<'_>, _: &[Value]) -> CallResult {
    Err(MethodFailure::Reverted)
}

pub fn failing(addr: &Address, owner: &Address) -> Contract {
    Contract::new(addr.clone(), "failing", owner.clone())
        .with_method(def("fail", always_fail, &[]))
        .with_method(def("noop", noop, &[]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::{Call, Chain};
    use crate::trace::Trace;
    use crate::types::ChainId;

    #[test]
    fn mint_is_owner_only() {
        let id = ChainId::new("c");
        let mut chain = Chain::new(id.clone());
        let owner = Address::new(&id, "owner");
        let tok = Address::new(&id, "tok");
        chain.deploy(token(&tok, &owner, &[("a", 0)])).unwrap();
        let mut t = Trace::new();
        let mint = |who: &Address| Call::new(who, &tok, "mint", vec![Value::text("a"), Value::Int(4)]);
        let stranger = Address::new(&id, "x");
        assert_eq!(chain.invoke(&mut t, &mint(&stranger), None).unwrap(), Err(MethodFailure::NotOwner));
        assert_eq!(chain.invoke(&mut t, &mint(&owner), None).unwrap(), Ok(Value::Int(4)));
    }

    #[test]
    fn counter_inbox_failing() {
        let id = ChainId::new("c");
        let mut chain = Chain::new(id.clone());
        let o = Address::new(&id, "o");
        let (cnt, inb, fl) = (Address::new(&id, "cnt"), Address::new(&id, "inb"), Address::new(&id, "fl"));
        chain.deploy(counter(&cnt, &o, 2)).unwrap();
        chain.deploy(inbox(&inb, &o)).unwrap();
        chain.deploy(failing(&fl, &o)).unwrap();
        let mut t = Trace::new();
        assert_eq!(chain.invoke(&mut t, &Call::new(&o, &cnt, "increment", vec![]), None).unwrap(), Ok(Value::Int(3)));
        let n = Call::new(&o, &inb, "notification", vec![o.to_value(), Value::text("c"), Value::text("hi")]);
        assert_eq!(chain.invoke(&mut t, &n, None).unwrap(), Ok(Value::Int(1)));
        assert_eq!(chain.state_of(&inb).unwrap().get("last"), Some(&Value::text("hi")));
        assert_eq!(chain.invoke(&mut t, &Call::new(&o, &fl, "fail", vec![]), None).unwrap(), Err(MethodFailure::Reverted));
    }

    #[test]
    fn transfer_to_unknown_account_is_bad_params() {
        let id = ChainId::new("c");
        let mut chain = Chain::new(id.clone());
        let o = Address::new(&id, "o");
        let tok = Address::new(&id, "tok");
        chain.deploy(token(&tok, &o, &[("a", 5)])).unwrap();
        let mut t = Trace::new();
        let c = Call::new(&o, &tok, "transfer", vec![Value::text("a"), Value::text("zed"), Value::Int(1)]);
        assert_eq!(chain.invoke(&mut t, &c, None).unwrap(), Err(MethodFailure::BadParams));
    }
}
