from pipeline.commands import single_stage

Command = single_stage('write_rates', 'rates', 'Pool evacuation counts per LGU (rates.csv)')
