//! CustomerAgreement, DeveloperAgreement and AcceptanceTest.

use std::collections::{BTreeSet, HashSet};

use super::state::{
    AcceptanceTestState, CustomerAgreementState, DeveloperAgreementState, StateKey, WorldState,
};
use super::{derive_id, reasons, CallContext, Revert};
use crate::crypto::Address;
use crate::tx::{tags, ContractId};
use crate::workflow::Verdict;

impl WorldState {
    fn bump_contract_seq(&mut self, touched: &mut BTreeSet<StateKey>) {
        self.next_contract_seq += 1;
        touched.insert(StateKey::Meta);
    }

    pub(crate) fn deploy_customer_agreement(
        &mut self,
        call: &CallContext,
        touched: &mut BTreeSet<StateKey>,
    ) -> Result<ContractId, Revert> {
        let contract_id = derive_id(&call.sender, call.nonce, tags::DEPLOY_CUSTOMER_AGREEMENT);
        self.customer_agreements.insert(
            contract_id,
            CustomerAgreementState {
                contract_id,
                customer: call.sender,
                testing_fee: 0,
            },
        );
        touched.insert(StateKey::CustomerAgreement(contract_id));
        self.bump_contract_seq(touched);
        Ok(contract_id)
    }

    pub(crate) fn set_testing_fee(
        &mut self,
        call: &CallContext,
        id: &ContractId,
        fee: u64,
        touched: &mut BTreeSet<StateKey>,
    ) -> Result<(), Revert> {
        let agreement = self
            .customer_agreements
            .get_mut(id)
            .ok_or(Revert(reasons::UNKNOWN_CONTRACT))?;
        if call.sender != agreement.customer {
            return Err(Revert(reasons::ONLY_CUSTOMER_SET_FEE));
        }
        agreement.testing_fee = fee;
        touched.insert(StateKey::CustomerAgreement(*id));
        Ok(())
    }

    pub(crate) fn deploy_developer_agreement(
        &mut self,
        call: &CallContext,
        touched: &mut BTreeSet<StateKey>,
    ) -> Result<ContractId, Revert> {
        let contract_id = derive_id(&call.sender, call.nonce, tags::DEPLOY_DEVELOPER_AGREEMENT);
        self.developer_agreements.insert(
            contract_id,
            DeveloperAgreementState {
                contract_id,
                developer: call.sender,
                reward: 0,
            },
        );
        touched.insert(StateKey::DeveloperAgreement(contract_id));
        self.bump_contract_seq(touched);
        Ok(contract_id)
    }

    pub(crate) fn set_reward(
        &mut self,
        call: &CallContext,
        id: &ContractId,
        amount: u64,
        touched: &mut BTreeSet<StateKey>,
    ) -> Result<(), Revert> {
        let agreement = self
            .developer_agreements
            .get_mut(id)
            .ok_or(Revert(reasons::UNKNOWN_CONTRACT))?;
        if call.sender != agreement.developer {
            return Err(Revert(reasons::ONLY_DEVELOPER_SET_REWARD));
        }
        agreement.reward = amount;
        touched.insert(StateKey::DeveloperAgreement(*id));
        Ok(())
    }

    pub(crate) fn deploy_acceptance_test(
        &mut self,
        call: &CallContext,
        customer: &Address,
        developer: &Address,
        fee: u64,
        touched: &mut BTreeSet<StateKey>,
    ) -> Result<ContractId, Revert> {
        if !self.accounts.contains_key(customer) || !self.accounts.contains_key(developer) {
            return Err(Revert(reasons::UNKNOWN_ACCOUNT));
        }
        let contract_id = derive_id(&call.sender, call.nonce, tags::DEPLOY_ACCEPTANCE_TEST);
        self.acceptance_tests.insert(
            contract_id,
            AcceptanceTestState {
                contract_id,
                customer: *customer,
                developer: *developer,
                testing_fee: fee,
                is_test_completed: false,
                escrow: 0,
                settlement: None,
            },
        );
        touched.insert(StateKey::AcceptanceTest(contract_id));
        self.bump_contract_seq(touched);
        Ok(contract_id)
    }

    /// `onlyCustomer`, then `msg.value == testingFee`, then funding guards.
    pub(crate) fn initiate_test(
        &mut self,
        call: &CallContext,
        id: &ContractId,
        touched: &mut BTreeSet<StateKey>,
    ) -> Result<(), Revert> {
        let test = self
            .acceptance_tests
            .get(id)
            .ok_or(Revert(reasons::UNKNOWN_CONTRACT))?;
        if call.sender != test.customer {
            return Err(Revert(reasons::ONLY_CUSTOMER_INITIATE));
        }
        if call.value != test.testing_fee {
            return Err(Revert(reasons::FEE_NOT_PAID));
        }
        if test.is_test_completed {
            return Err(Revert(reasons::ALREADY_COMPLETED));
        }
        if test.escrow != 0 {
            return Err(Revert(reasons::ALREADY_FUNDED));
        }
        let balance = self.balance(&call.sender);
        if balance < call.value {
            return Err(Revert(reasons::INSUFFICIENT_BALANCE));
        }

        let account = self.accounts.get_mut(&call.sender).expect("sender exists");
        account.balance = balance - call.value;
        let test = self.acceptance_tests.get_mut(id).expect("checked above");
        test.escrow = call.value;
        test.is_test_completed = false;
        touched.insert(StateKey::AcceptanceTest(*id));
        Ok(())
    }

    /// `onlyDeveloper`, funded escrow, and a Pass verdict on every linked
    /// test case; then pays the fee to the developer.
    pub(crate) fn complete_test(
        &mut self,
        call: &CallContext,
        id: &ContractId,
        touched: &mut BTreeSet<StateKey>,
    ) -> Result<(), Revert> {
        let test = self
            .acceptance_tests
            .get(id)
            .ok_or(Revert(reasons::UNKNOWN_CONTRACT))?;
        if call.sender != test.developer {
            return Err(Revert(reasons::ONLY_DEVELOPER_COMPLETE));
        }
        if test.is_test_completed {
            return Err(Revert(reasons::ALREADY_COMPLETED));
        }
        if test.escrow != test.testing_fee {
            return Err(Revert(reasons::NOT_FUNDED));
        }
        if !self.linked_cases_verified(id) {
            return Err(Revert(reasons::RESULTS_NOT_VERIFIED));
        }
        let fee = test.testing_fee;
        let developer = test.developer;
        let credited = self
            .balance(&developer)
            .checked_add(fee)
            .expect("escrowed currency fits issuance");

        let account = self
            .accounts
            .get_mut(&developer)
            .expect("developer account checked at deployment");
        account.balance = credited;
        let test = self.acceptance_tests.get_mut(id).expect("checked above");
        test.is_test_completed = true;
        test.escrow = 0;
        test.settlement = Some(call.stamp);
        touched.insert(StateKey::Account(developer));
        touched.insert(StateKey::AcceptanceTest(*id));
        Ok(())
    }

    /// True iff every case linked to `contract` has at least one Pass.
    pub fn linked_cases_verified(&self, contract: &ContractId) -> bool {
        let passed: HashSet<_> = self
            .registry
            .executions
            .values()
            .filter(|e| e.verdict == Verdict::Pass)
            .map(|e| e.case_id)
            .collect();
        self.registry
            .cases
            .values()
            .filter(|c| c.acceptance_contract == *contract)
            .all(|c| passed.contains(&c.case_id))
    }
}
