from pipeline.commands import single_stage

Command = single_stage('write_popest', 'popest', 'Estimate the population grid and compare it with the census (popgrid.csv)')
